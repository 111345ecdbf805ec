#include "arise/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace arise {

void AgentBuffer::push(Transition t) {
  if (capacity_ > 0 && transitions_.size() >= capacity_) {
    throw ShapeError("agent buffer full (capacity " + std::to_string(capacity_) + ")");
  }
  if (!std::isfinite(t.log_prob)) throw NumericError("transition log-prob is not finite");
  transitions_.push_back(std::move(t));
}

void AgentBuffer::clear() {
  transitions_.clear();
  bootstrap_value = 0.0;
}

std::vector<double> compute_gae(const AgentBuffer& buffer, double gamma, double lambda) {
  if (buffer.empty()) throw EmptyBufferError("compute_gae: buffer is empty");
  const auto& ts = buffer.transitions();
  const std::size_t n = ts.size();
  std::vector<double> adv(n);
  double next_value = buffer.bootstrap_value;
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double not_done = ts[t].done ? 0.0 : 1.0;
    const double delta = ts[t].reward_aug + gamma * not_done * next_value - ts[t].value;
    next_adv = delta + gamma * lambda * not_done * next_adv;
    adv[t] = next_adv;
    next_value = ts[t].value;
  }
  return adv;
}

std::vector<double> compute_returns(std::span<const double> advantages, std::span<const double> values) {
  if (advantages.size() != values.size()) {
    throw ShapeError("compute_returns: " + std::to_string(advantages.size()) + " advantages vs " +
                     std::to_string(values.size()) + " values");
  }
  std::vector<double> out(advantages.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = advantages[i] + values[i];
  return out;
}

std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ShapeError("minibatches: batch size must be >= 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  // Fisher-Yates with our own index draws, so the order is toolchain independent.
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void normalize_advantages(std::span<double> advantages) {
  if (advantages.empty()) return;
  const double n = static_cast<double>(advantages.size());
  const double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double std = std::max(std::sqrt(var / n), 1e-8);
  for (double& a : advantages) a = (a - mean) / std;
}

}  // namespace arise
