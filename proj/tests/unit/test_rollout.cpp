#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "arise/rollout.hpp"
#include "test_util.hpp"

using namespace arise;

namespace {

AgentBuffer make_buffer(const std::vector<double>& r, const std::vector<double>& v, const std::vector<bool>& d,
                        double bootstrap) {
  AgentBuffer buf(r.size());
  for (std::size_t t = 0; t < r.size(); ++t) {
    Transition tr;
    tr.state = Vector::Zero(1);
    tr.action = Action::discrete(0);
    tr.reward_env = r[t];
    tr.reward_aug = r[t];
    tr.done = d[t];
    tr.value = v[t];
    buf.push(tr);
  }
  buf.bootstrap_value = bootstrap;
  return buf;
}

// A_t = sum_k (gamma lambda)^k delta_{t+k}, truncated at the first done.
std::vector<double> forward_sum(const std::vector<double>& r, const std::vector<double>& v,
                                const std::vector<bool>& d, double bootstrap, double gamma, double lambda) {
  const std::size_t n = r.size();
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double next = t + 1 < n ? v[t + 1] : bootstrap;
    delta[t] = r[t] + gamma * (d[t] ? 0.0 : 1.0) * next - v[t];
  }
  std::vector<double> adv(n);
  for (std::size_t t = 0; t < n; ++t) {
    double coef = 1.0, total = 0.0;
    for (std::size_t k = t; k < n; ++k) {
      total += coef * delta[k];
      if (d[k]) break;
      coef *= gamma * lambda;
    }
    adv[t] = total;
  }
  return adv;
}

}  // namespace

TEST_CASE("GAE equals the forward-sum definition") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(20);
    std::vector<double> r(n), v(n);
    std::vector<bool> d(n);
    for (std::size_t t = 0; t < n; ++t) {
      r[t] = rng.normal();
      v[t] = rng.normal();
      d[t] = rng.uniform() < 0.2;
    }
    const double boot = rng.normal();
    const double gamma = rng.uniform(0.8, 1.0), lambda = rng.uniform(0.0, 1.0);
    const auto got = compute_gae(make_buffer(r, v, d, boot), gamma, lambda);
    const auto want = forward_sum(r, v, d, boot, gamma, lambda);
    for (std::size_t t = 0; t < n; ++t) REQUIRE(std::abs(got[t] - want[t]) < 1e-10);
  }
}

TEST_CASE("GAE special cases") {
  const std::vector<double> r{1.0, 2.0, 3.0}, v{0.5, 0.25, 0.125};
  const std::vector<bool> open{false, false, false};
  SUBCASE("lambda 0 gives one-step TD residuals") {
    const auto a = compute_gae(make_buffer(r, v, open, 4.0), 0.9, 0.0);
    CHECK(a[0] == doctest::Approx(1.0 + 0.9 * 0.25 - 0.5));
    CHECK(a[2] == doctest::Approx(3.0 + 0.9 * 4.0 - 0.125));
  }
  SUBCASE("gamma = lambda = 1 gives Monte Carlo return minus value") {
    const auto a = compute_gae(make_buffer(r, v, open, 4.0), 1.0, 1.0);
    CHECK(a[0] == doctest::Approx(1.0 + 2.0 + 3.0 + 4.0 - 0.5));
  }
  SUBCASE("done masks the bootstrap") {
    const auto a = compute_gae(make_buffer(r, v, {false, false, true}, 1e6), 0.99, 0.95);
    CHECK(a[2] == doctest::Approx(3.0 - 0.125));
  }
  CHECK_THROWS_AS(compute_gae(AgentBuffer(4), 0.99, 0.95), EmptyBufferError);
}

TEST_CASE("returns are advantages plus values") {
  const std::vector<double> a{1.0, -2.0}, v{0.5, 0.5};
  CHECK(compute_returns(a, v) == std::vector<double>{1.5, -1.5});
  CHECK_THROWS_AS(compute_returns(a, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("buffer capacity and validation") {
  AgentBuffer buf(1);
  Transition t;
  t.state = Vector::Zero(1);
  buf.push(t);
  CHECK_THROWS(buf.push(t));
  buf.clear();
  CHECK(buf.empty());
  t.log_prob = std::nan("");
  CHECK_THROWS(buf.push(t));
}

TEST_CASE("minibatches partition the index range") {
  Rng rng(2);
  const auto batches = minibatches(130, 64, rng);
  CHECK(batches.size() == 3);
  CHECK(batches.back().size() == 2);
  std::vector<std::size_t> all;
  for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(130);
  std::iota(expected.begin(), expected.end(), std::size_t{0});
  CHECK(all == expected);
  Rng a(9), b(9);
  CHECK(minibatches(50, 8, a) == minibatches(50, 8, b));
}

TEST_CASE("advantage normalization") {
  std::vector<double> a{1.0, 2.0, 3.0, 4.0};
  normalize_advantages(a);
  double mean = 0.0, var = 0.0;
  for (double x : a) mean += x / 4.0;
  for (double x : a) var += (x - mean) * (x - mean) / 4.0;
  CHECK(std::abs(mean) < 1e-15);
  CHECK(var == doctest::Approx(1.0));

  std::vector<double> flat{3.0, 3.0, 3.0};
  normalize_advantages(flat);
  for (double x : flat) CHECK(x == 0.0);
}
