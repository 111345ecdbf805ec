#include <doctest.h>

#include <numbers>

#include "arise/envs.hpp"

using namespace arise;
using namespace arise::envs;

namespace {

Action force(double f) { return Action::continuous(Vector::Constant(1, f)); }

}  // namespace

TEST_CASE("cartpole reference step") {
  const CartPoleState next = cartpole_dynamics(CartPoleState{}, 1);
  CHECK(next.x == 0.0);
  CHECK(next.x_dot == doctest::Approx(0.195122).epsilon(1e-5));
  CHECK(next.theta == 0.0);
  CHECK(next.theta_dot == doctest::Approx(-0.292683).epsilon(1e-5));
  CHECK_THROWS_AS(cartpole_dynamics(CartPoleState{}, 2), InvalidAction);
}

TEST_CASE("cartpole rewards, termination and truncation") {
  CartPole env(1);
  const Vector obs = env.reset();
  CHECK((obs.cwiseAbs().array() <= 0.05).all());
  const StepResult r = env.step(Action::discrete(0));
  CHECK(r.reward == 1.0);

  env.set_state(CartPoleState{0.0, 0.0, 0.25, 0.0});
  CHECK(env.step(Action::discrete(0)).terminated);

  // Always pushing right topples the pole well before the step limit.
  env.reset();
  int steps = 0;
  for (;;) {
    const StepResult s = env.step(Action::discrete(1));
    ++steps;
    if (s.terminated || s.truncated) {
      CHECK(s.terminated);
      break;
    }
  }
  CHECK(steps < 500);
}

TEST_CASE("cartpole truncates at 500 steps") {
  CartPole env(2);
  env.reset();
  StepResult r;
  for (int t = 0; t < 500; ++t) {
    env.set_state(CartPoleState{});  // pin the pole upright
    r = env.step(Action::discrete(t % 2));
    if (t < 499) REQUIRE_FALSE(r.truncated);
  }
  CHECK(r.truncated);
  CHECK_FALSE(r.terminated);
}

TEST_CASE("mountain car") {
  MountainCarContinuous env(3);
  env.reset();
  env.set_state(MountainCarState{-std::acos(0.0) / 3.0, 0.0});  // cos(3x) = 0: valley floor force balance
  const StepResult r = env.step(force(0.0));
  CHECK(r.reward == 0.0);

  env.set_state(MountainCarState{0.44, 0.05});
  const StepResult goal = env.step(force(1.0));
  CHECK(goal.terminated);
  CHECK(goal.reward == doctest::Approx(100.0 - 0.1));

  Rng rng(4);
  env.reset();
  for (int t = 0; t < 10000; ++t) {
    const StepResult s = env.step(force(rng.uniform(-3.0, 3.0)));
    REQUIRE(std::abs(s.observation(1)) <= 0.07);
    REQUIRE(s.observation(0) >= -1.2);
    REQUIRE(s.observation(0) <= 0.6);
    if (s.terminated || s.truncated) env.reset();
  }
}

TEST_CASE("pendulum") {
  CHECK(pendulum_reward(PendulumState{0.0, 0.0}, 0.0) == 0.0);
  CHECK(angle_normalize(3.0 * std::numbers::pi) == doctest::Approx(-std::numbers::pi));
  Pendulum env(5);
  env.reset();
  Rng rng(5);
  int steps = 0;
  for (;;) {
    const StepResult s = env.step(force(rng.uniform(-2.0, 2.0)));
    REQUIRE(s.reward <= 0.0);
    REQUIRE(s.observation.allFinite());
    ++steps;
    if (s.truncated) break;
  }
  CHECK(steps == 200);

  // Released from 90 degrees with no torque the angular velocity oscillates.
  PendulumState s{std::numbers::pi / 2.0, 0.0};
  int sign_changes = 0;
  double prev = 0.0;
  for (int t = 0; t < 400; ++t) {
    s = pendulum_dynamics(s, 0.0);
    if (prev != 0.0 && (s.theta_dot > 0) != (prev > 0)) ++sign_changes;
    prev = s.theta_dot;
  }
  CHECK(sign_changes >= 2);
}

TEST_CASE("reward shift presets") {
  auto env = make_env("cartpole+shift:center-penalty-v1:1", 0);
  auto* shift = dynamic_cast<RewardShift*>(env.get());
  REQUIRE(shift != nullptr);
  env->reset();
  CHECK_FALSE(shift->shifted());
  CHECK(env->step(Action::discrete(0)).reward == 1.0);
  env->reset();
  CHECK(shift->shifted());
  Vector centered = Vector::Zero(4);
  CHECK(shift->transform(1.0, centered) == 1.0);
  centered(0) = 2.4;
  CHECK(shift->transform(1.0, centered) == doctest::Approx(0.5));

  auto affine = make_env("pendulum+shift:affine:0:2:-1", 0);
  auto* a = dynamic_cast<RewardShift*>(affine.get());
  affine->reset();
  CHECK(a->transform(3.0, Vector::Zero(3)) == doctest::Approx(5.0));

  // Evaluation resets do not advance the episode counter.
  shift->set_evaluation_mode(true);
  const auto before = shift->episode_index();
  env->reset();
  CHECK(shift->episode_index() == before);
}

TEST_CASE("environment ids") {
  CHECK_NOTHROW(validate_env_id("cartpole"));
  CHECK_NOTHROW(validate_env_id("mountaincar-cont"));
  CHECK_NOTHROW(validate_env_id("pendulum+shift:affine:10:1:0"));
  CHECK_THROWS_AS(validate_env_id("lunarlander"), ConfigError);
  CHECK_THROWS_AS(validate_env_id("cartpole+shift:bogus:3"), ConfigError);
  CHECK_THROWS_AS(validate_env_id("cartpole+shift:center-penalty-v1:x"), ConfigError);
  CHECK_THROWS_AS(validate_env_id("cartpole+shift:affine:3"), ConfigError);
  CHECK_THROWS_AS(validate_env_id("cartpole+shift:center-penalty-v1:-1"), ConfigError);
}

TEST_CASE("same seed and actions give identical trajectories; state restores exactly") {
  for (const std::string id : {"cartpole", "mountaincar-cont", "pendulum", "cartpole+shift:center-penalty-v1:2"}) {
    auto a = make_env(id, 42);
    auto b = make_env(id, 42);
    Rng rng(1);
    const bool discrete = a->spec().action_spec.is_discrete();
    auto pick = [&]() { return discrete ? Action::discrete(static_cast<int>(rng.index(2))) : force(rng.uniform(-1, 1)); };
    REQUIRE(a->reset() == b->reset());
    std::unique_ptr<Environment> saved;
    EnvState snapshot;
    std::vector<Action> tail;
    std::vector<StepResult> expected;
    for (int t = 0; t < 600; ++t) {
      if (t == 300) {
        snapshot = a->save_state();
        saved = a->clone();
      }
      const Action act = pick();
      const StepResult ra = a->step(act);
      const StepResult rb = b->step(act);
      REQUIRE(ra.observation == rb.observation);
      REQUIRE(ra.reward == rb.reward);
      if (t >= 300) {
        tail.push_back(act);
        expected.push_back(ra);
      }
      if (ra.terminated || ra.truncated) {
        REQUIRE(a->reset() == b->reset());
        if (t >= 300) tail.push_back(Action::discrete(-1));  // marks a reset
      }
    }
    auto c = make_env(id, 7);
    c->load_state(snapshot);
    std::size_t k = 0;
    for (const Action& act : tail) {
      if (act.index == -1 && act.values.size() == 0) {
        c->reset();
        continue;
      }
      const StepResult rc = c->step(act);
      REQUIRE(rc.observation == expected[k].observation);
      REQUIRE(rc.reward == expected[k].reward);
      ++k;
    }
  }
}
