#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "arise/common.hpp"
#include "arise/policy.hpp"
#include "arise/rng.hpp"

namespace arise {

struct Transition {
  Vector state;
  Action action;
  double reward_env = 0.0;  // raw environment reward
  double reward_aug = 0.0;  // reward + beta * novelty; what GAE consumes
  bool done = false;
  double log_prob = 0.0;
  double value = 0.0;
  int agent_id = 0;
  double novelty = 0.0;
};

/// Per-agent on-policy trajectory store. Episodes are appended contiguously;
/// only the final episode may be incomplete, in which case bootstrap_value
/// holds V(s_{T+1}).
class AgentBuffer {
 public:
  explicit AgentBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

  void push(Transition t);
  void clear();

  std::size_t size() const { return transitions_.size(); }
  bool empty() const { return transitions_.empty(); }
  std::size_t capacity() const { return capacity_; }
  void set_capacity(std::size_t capacity) { capacity_ = capacity; }

  const std::vector<Transition>& transitions() const { return transitions_; }
  const Transition& operator[](std::size_t i) const { return transitions_[i]; }

  double bootstrap_value = 0.0;

 private:
  std::size_t capacity_;
  std::vector<Transition> transitions_;
};

/// GAE by backward recursion over augmented rewards:
///   delta_t = r_t + gamma (1 - d_t) V(s_{t+1}) - V(s_t)
///   A_t     = delta_t + gamma lambda (1 - d_t) A_{t+1}
/// where V(s_{T+1}) is the buffer's bootstrap value.
std::vector<double> compute_gae(const AgentBuffer& buffer, double gamma, double lambda);

std::vector<double> compute_returns(std::span<const double> advantages, std::span<const double> values);

/// Shuffled index batches covering [0, n) exactly once.
std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size, Rng& rng);

/// In place: zero mean, unit population std. A spread below 1e-8 is treated
/// as 1e-8.
void normalize_advantages(std::span<double> advantages);

}  // namespace arise
