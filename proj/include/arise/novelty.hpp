#pragma once

#include <cstddef>
#include <span>

#include "arise/common.hpp"

namespace arise {

struct NoveltyConfig {
  double beta = 0.01;
};

/// tanh of the distance from `embedding` to the nearest particle other than
/// `self_index`; lies in [0, 1). With no other particle the bonus is 0 and a
/// warning is logged. Pass self_index >= positions.size() to compare against
/// every particle.
double novelty_bonus(const Vector& embedding, std::span<const Vector> particle_positions,
                     std::size_t self_index);

inline double augment_reward(double reward, double novelty, double beta) { return reward + beta * novelty; }

/// F = mean reward + mean novelty. An agent with no data this iteration gets
/// -inf so it never wins best-agent selection.
double fitness(double mean_reward, double mean_novelty);
double fitness_empty();

}  // namespace arise
