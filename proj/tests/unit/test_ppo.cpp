#include <doctest.h>

#include "arise/ppo.hpp"
#include "test_util.hpp"

using namespace arise;

namespace {

PPOBatch random_batch(const ActorCriticPolicy& policy, int n, Rng& rng) {
  PPOBatch batch;
  batch.states.resize(policy.obs_dim(), n);
  batch.old_log_probs.resize(n);
  batch.advantages = testing::random_vector(n, rng);
  batch.returns = testing::random_vector(n, rng);
  for (int j = 0; j < n; ++j) {
    batch.states.col(j) = testing::random_vector(policy.obs_dim(), rng);
    const auto s = policy.act(batch.states.col(j), rng);
    batch.actions.push_back(s.action);
    // Spread the ratios across both sides of the clip range.
    batch.old_log_probs(j) = s.log_prob + 0.4 * rng.normal();
  }
  return batch;
}

AgentBuffer rollout(const ActorCriticPolicy& policy, int n, Rng& rng) {
  AgentBuffer buf(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    Transition tr;
    tr.state = testing::random_vector(policy.obs_dim(), rng);
    const auto s = policy.act(tr.state, rng);
    tr.action = s.action;
    tr.log_prob = s.log_prob;
    tr.value = s.value;
    tr.reward_env = tr.reward_aug = rng.normal();
    tr.done = t % 7 == 6;
    buf.push(tr);
  }
  return buf;
}

}  // namespace

TEST_CASE("clipped surrogate examples") {
  const std::vector<double> zero{0.0, 0.0};
  CHECK(surrogate_objective(zero, zero, std::vector<double>{1.0, -2.0}, 0.2) == doctest::Approx(-0.5));
  // Ratio 1.5 on a positive advantage is capped at 1.2.
  CHECK(surrogate_objective(std::vector<double>{std::log(1.5)}, std::vector<double>{0.0},
                            std::vector<double>{1.0}, 0.2) == doctest::Approx(1.2));
  // Ratio 0.5 on a negative advantage takes the pessimistic -0.8.
  CHECK(surrogate_objective(std::vector<double>{std::log(0.5)}, std::vector<double>{0.0},
                            std::vector<double>{-1.0}, 0.2) == doctest::Approx(-0.8));
  CHECK_THROWS_AS(surrogate_objective(zero, std::vector<double>{0.0}, zero, 0.2), ShapeError);
}

TEST_CASE("value loss is the mean squared error") {
  CHECK(value_loss(std::vector<double>{1.0, 2.0}, std::vector<double>{0.0, 4.0}) == doctest::Approx(2.5));
}

TEST_CASE("config validation names the key") {
  PPOConfig c;
  c.clip_epsilon = 0.0;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "ppo.clip_epsilon");
  }
  c = PPOConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("combined objective gradient agrees with finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const bool discrete : {true, false}) {
      const ActionSpec spec = discrete ? ActionSpec::discrete(3)
                                       : ActionSpec::continuous(Vector::Constant(2, -1.0), Vector::Constant(2, 1.0));
      const ActorCriticPolicy policy(4, spec, {6, 6}, seed);
      Rng rng(seed + 50);
      const PPOBatch batch = random_batch(policy, 8, rng);
      const PPOConfig cfg;
      const ObjectiveValue obj = combined_objective(policy, batch, cfg);
      const Vector numeric = testing::finite_difference(
          [&](const Vector& p) {
            ActorCriticPolicy probe = policy;
            probe.set_flat(p);
            return combined_objective(probe, batch, cfg).loss;
          },
          policy.get_flat());
      CHECK(testing::relative_error(obj.gradient.flat(), numeric) < 1e-5);
    }
  }
}

TEST_CASE("update_agent consumes the buffer deterministically") {
  const ActorCriticPolicy start(3, ActionSpec::discrete(2), {8, 8}, 4);
  Rng data_rng(1);
  const AgentBuffer data = rollout(start, 100, data_rng);
  PPOConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;

  auto run = [&]() {
    ActorCriticPolicy policy = start;
    AgentOptimizers opt = make_optimizers(policy, cfg.learning_rate);
    AgentBuffer buf = data;
    Rng rng(7);
    const UpdateStats stats = update_agent(policy, opt, buf, cfg, rng);
    CHECK(buf.empty());
    CHECK(stats.gradient_steps == 3 * 4);
    CHECK(stats.approx_kl >= 0.0);
    CHECK(std::isfinite(stats.policy_loss));
    CHECK(opt.actor.state().step_count == 12);
    return policy;
  };
  const ActorCriticPolicy a = run();
  const ActorCriticPolicy b = run();
  CHECK(a == b);
  CHECK_FALSE(a == start);
}

TEST_CASE("numeric failure restores the policy and optimizer") {
  ActorCriticPolicy policy(3, ActionSpec::discrete(2), {8}, 4);
  Rng data_rng(1);
  AgentBuffer buf = rollout(policy, 20, data_rng);
  AgentBuffer poisoned(20);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    Transition t = buf[i];
    if (i == 3) t.reward_aug = std::numeric_limits<double>::infinity();
    poisoned.push(t);
  }
  AgentOptimizers opt = make_optimizers(policy, 3e-4);
  const ActorCriticPolicy before = policy;
  Rng rng(3);
  CHECK_THROWS_AS(update_agent(policy, opt, poisoned, PPOConfig{}, rng), NumericError);
  CHECK(policy == before);
  CHECK(opt.actor.state().step_count == 0);
}
