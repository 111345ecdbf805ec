#include "arise/novelty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

namespace arise {

double novelty_bonus(const Vector& embedding, std::span<const Vector> particle_positions,
                     std::size_t self_index) {
  double nearest = std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < particle_positions.size(); ++j) {
    if (j == self_index) continue;
    if (particle_positions[j].size() != embedding.size()) {
      throw ShapeError("novelty_bonus: embedding and particle dimensions differ");
    }
    nearest = std::min(nearest, (embedding - particle_positions[j]).norm());
    any = true;
  }
  if (!any) {
    spdlog::warn("novelty_bonus: no other particles, novelty set to 0");
    return 0.0;
  }
  // tanh rounds to 1.0 for distances beyond ~19; keep the bonus strictly below 1.
  return std::min(std::tanh(nearest), std::nextafter(1.0, 0.0));
}

double fitness(double mean_reward, double mean_novelty) { return mean_reward + mean_novelty; }

double fitness_empty() { return -std::numeric_limits<double>::infinity(); }

}  // namespace arise
