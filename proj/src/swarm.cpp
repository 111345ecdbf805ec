#include "arise/swarm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include <spdlog/spdlog.h>

namespace arise::swarm {

Bounds particle_bounds(const ActionSpec& spec) {
  if (spec.is_discrete()) return {Vector::Zero(spec.dim), Vector::Ones(spec.dim)};
  return {spec.low, spec.high};
}

Vector default_velocity_limit(const ActionSpec& spec) {
  if (spec.is_discrete()) return Vector::Ones(spec.dim);
  return 0.25 * (spec.high - spec.low);
}

SwarmState make_swarm(std::size_t num_particles, const Bounds& bounds, const Vector& v_max, Rng& rng,
                      double w, double c1, double c2) {
  if (num_particles == 0) throw ShapeError("make_swarm: need at least one particle");
  const Eigen::Index dim = bounds.low.size();
  SwarmState swarm;
  swarm.bounds = bounds;
  swarm.v_max = v_max;
  swarm.w = w;
  swarm.c1 = c1;
  swarm.c2 = c2;
  for (std::size_t i = 0; i < num_particles; ++i) {
    Particle p;
    p.position.resize(dim);
    p.velocity.resize(dim);
    for (Eigen::Index d = 0; d < dim; ++d) p.position(d) = rng.uniform(bounds.low(d), bounds.high(d));
    for (Eigen::Index d = 0; d < dim; ++d) p.velocity(d) = rng.uniform(-0.5 * v_max(d), 0.5 * v_max(d));
    p.pbest_position = p.position;
    swarm.particles.push_back(std::move(p));
  }
  swarm.gbest_position = swarm.particles.front().position;
  return swarm;
}

Action pso_action(const Particle& particle, const ActionSpec& spec) {
  if (particle.position.size() != spec.embedding_dim()) {
    throw ShapeError("pso_action: particle dimension " + std::to_string(particle.position.size()) +
                     " != action embedding dimension " + std::to_string(spec.embedding_dim()));
  }
  if (spec.is_discrete()) {
    Eigen::Index best = 0;
    particle.position.maxCoeff(&best);
    return Action::discrete(static_cast<int>(best));
  }
  return Action::continuous(particle.position.cwiseMax(spec.low).cwiseMin(spec.high));
}

void update_particle(Particle& particle, const Vector& gbest_position, double w, double c1, double c2,
                     const Vector& r1, const Vector& r2, const Vector& v_max, const Bounds& bounds) {
  const Eigen::Index dim = particle.position.size();
  if (gbest_position.size() != dim || r1.size() != dim || r2.size() != dim || v_max.size() != dim) {
    throw ShapeError("update_particle: dimension mismatch");
  }
  particle.velocity = w * particle.velocity +
                      c1 * r1.cwiseProduct(particle.pbest_position - particle.position) +
                      c2 * r2.cwiseProduct(gbest_position - particle.position);
  particle.velocity = particle.velocity.cwiseMax(-v_max).cwiseMin(v_max);
  particle.position = (particle.position + particle.velocity).cwiseMax(bounds.low).cwiseMin(bounds.high);
}

void update_particle(Particle& particle, const Vector& gbest_position, double w, double c1, double c2,
                     Rng& rng, const Vector& v_max, const Bounds& bounds) {
  const Eigen::Index dim = particle.position.size();
  Vector r1(dim), r2(dim);
  for (Eigen::Index d = 0; d < dim; ++d) r1(d) = rng.uniform();
  for (Eigen::Index d = 0; d < dim; ++d) r2(d) = rng.uniform();
  update_particle(particle, gbest_position, w, c1, c2, r1, r2, v_max, bounds);
}

void update_bests(SwarmState& swarm, std::span<const double> fitnesses, std::span<const Vector> positions) {
  if (fitnesses.size() != swarm.particles.size() || positions.size() != swarm.particles.size()) {
    throw ShapeError("update_bests: need one fitness and position per particle");
  }
  for (std::size_t i = 0; i < swarm.particles.size(); ++i) {
    if (std::isnan(fitnesses[i])) {
      ++swarm.skipped_fitness;
      spdlog::warn("update_bests: NaN fitness for particle {}, skipped", i);
      continue;
    }
    Particle& p = swarm.particles[i];
    if (fitnesses[i] > p.pbest_fitness) {
      p.pbest_fitness = fitnesses[i];
      p.pbest_position = positions[i];
    }
    if (p.pbest_fitness > swarm.gbest_fitness) {
      swarm.gbest_fitness = p.pbest_fitness;
      swarm.gbest_position = p.pbest_position;
    }
  }
}

double population_variance(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss / n;
}

Coefficients adapt_coefficients(Coefficients current, std::span<const double> fitnesses,
                                const AdaptationParams& params) {
  if (fitnesses.size() < 2) throw UndefinedMetric("adapt_coefficients: need at least two fitness values");
  const double var = population_variance(fitnesses);
  Coefficients next = current;
  if (var > params.var_high) {
    next.c2 = std::min(current.c2 + params.delta, params.c_max);
    next.c1 = std::max(current.c1 - params.delta, params.c_min);
  } else if (var < params.var_low) {
    next.c1 = std::min(current.c1 + params.delta, params.c_max);
    next.c2 = std::max(current.c2 - params.delta, params.c_min);
  }
  return next;
}

double decay_inertia(double progress, double w_start, double w_end) {
  const double p = std::clamp(progress, 0.0, 1.0);
  return w_start + (w_end - w_start) * p;
}

double swarm_diversity(std::span<const Vector> positions) {
  const std::size_t m = positions.size();
  if (m < 2) throw UndefinedMetric("swarm_diversity: need at least two particles");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      total += (positions[i] - positions[j]).norm();
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double swarm_diversity(std::span<const Particle> particles) {
  std::vector<Vector> positions;
  positions.reserve(particles.size());
  for (const auto& p : particles) positions.push_back(p.position);
  return swarm_diversity(std::span<const Vector>(positions));
}

void ExponentialMedian::push(double x) {
  history_.push_back(x);
  while (history_.size() > max_history_) history_.pop_front();
}

double ExponentialMedian::value() const {
  if (history_.empty()) throw UndefinedMetric("ExponentialMedian: no observations");
  std::vector<std::pair<double, double>> weighted;  // (value, weight)
  weighted.reserve(history_.size());
  double weight = 1.0;
  double total = 0.0;
  for (auto it = history_.rbegin(); it != history_.rend(); ++it) {
    weighted.emplace_back(*it, weight);
    total += weight;
    weight *= decay_;
  }
  std::sort(weighted.begin(), weighted.end());
  double cumulative = 0.0;
  for (const auto& [v, wgt] : weighted) {
    cumulative += wgt;
    if (cumulative >= 0.5 * total) return v;
  }
  return weighted.back().first;
}

}  // namespace arise::swarm
