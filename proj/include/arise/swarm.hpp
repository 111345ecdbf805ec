#pragma once

#include <cstddef>
#include <deque>
#include <limits>
#include <span>
#include <vector>

#include "arise/common.hpp"
#include "arise/policy.hpp"
#include "arise/rng.hpp"

namespace arise::swarm {

inline constexpr double kNoFitness = -std::numeric_limits<double>::infinity();

struct Particle {
  Vector position;
  Vector velocity;
  Vector pbest_position;
  double pbest_fitness = kNoFitness;
};

// Box the particles live in. For discrete action spaces this is [0, 1]^n,
// the space one-hot action embeddings live in.
struct Bounds {
  Vector low;
  Vector high;
};

Bounds particle_bounds(const ActionSpec& spec);
/// 0.25 (high - low) per dimension for continuous actions, 1.0 for discrete.
Vector default_velocity_limit(const ActionSpec& spec);

struct SwarmState {
  std::vector<Particle> particles;
  Vector gbest_position;
  double gbest_fitness = kNoFitness;
  double w = 0.7;
  double c1 = 1.5;
  double c2 = 1.5;
  Bounds bounds;
  Vector v_max;
  std::size_t skipped_fitness = 0;  // NaN fitness values ignored by update_bests
};

/// Positions uniform in bounds, velocities uniform in [-v_max/2, v_max/2];
/// the initial gbest position is particle 0's position.
SwarmState make_swarm(std::size_t num_particles, const Bounds& bounds, const Vector& v_max, Rng& rng,
                      double w = 0.7, double c1 = 1.5, double c2 = 1.5);

/// Continuous: position clamped to the action bounds. Discrete: argmax of the
/// position components (lowest index on ties).
Action pso_action(const Particle& particle, const ActionSpec& spec);

/// v <- w v + c1 r1 (pbest - p) + c2 r2 (gbest - p), clamped to +-v_max;
/// p <- p + v, clamped to bounds. r1, r2 given per component.
void update_particle(Particle& particle, const Vector& gbest_position, double w, double c1, double c2,
                     const Vector& r1, const Vector& r2, const Vector& v_max, const Bounds& bounds);

/// Same with r1, r2 drawn uniform on [0, 1] per component.
void update_particle(Particle& particle, const Vector& gbest_position, double w, double c1, double c2,
                     Rng& rng, const Vector& v_max, const Bounds& bounds);

/// pbest replaced iff fitness strictly exceeds it; gbest tracks the best pbest
/// (incumbent kept on ties). NaN fitness skips that particle.
void update_bests(SwarmState& swarm, std::span<const double> fitnesses, std::span<const Vector> positions);

struct Coefficients {
  double c1 = 1.5;
  double c2 = 1.5;
};

struct AdaptationParams {
  double var_low = 0.0;
  double var_high = 0.0;
  double delta = 0.05;
  double c_min = 0.5;
  double c_max = 2.5;
};

double population_variance(std::span<const double> values);

/// High fitness variance shifts weight toward the social term, low variance
/// toward the cognitive term; the dead band between thresholds leaves both.
Coefficients adapt_coefficients(Coefficients current, std::span<const double> fitnesses,
                                const AdaptationParams& params);

/// Linear inertia schedule; progress is clamped to [0, 1].
double decay_inertia(double progress, double w_start = 0.7, double w_end = 0.3);

/// Mean Euclidean distance over unordered particle pairs.
double swarm_diversity(std::span<const Particle> particles);
double swarm_diversity(std::span<const Vector> positions);

/// Exponentially weighted median of a scalar stream: the weighted median of
/// the history with weight decay^age.
class ExponentialMedian {
 public:
  explicit ExponentialMedian(double decay = 0.95, std::size_t max_history = 256)
      : decay_(decay), max_history_(max_history) {}

  void push(double x);
  bool empty() const { return history_.empty(); }
  double value() const;

  const std::deque<double>& history() const { return history_; }
  void set_history(std::deque<double> history) { history_ = std::move(history); }

 private:
  double decay_;
  std::size_t max_history_;
  std::deque<double> history_;  // newest at the back
};

}  // namespace arise::swarm
