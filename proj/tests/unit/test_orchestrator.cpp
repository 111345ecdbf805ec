#include <doctest.h>

#include <filesystem>
#include <set>

#include "arise/orchestrator.hpp"
#include "test_util.hpp"

using namespace arise;

namespace {

AriseConfig small_config(std::uint64_t seed = 0) {
  AriseConfig c;
  c.seed = seed;
  c.horizon = 256;
  c.total_iterations = 4;
  c.hidden = {16, 16};
  c.eval_interval = 20;
  c.eval_episodes = 2;
  return c;
}

PPOConfig small_ppo() {
  PPOConfig p;
  p.epochs = 2;
  return p;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("arise_unit_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

bool rows_equal(const MetricsRow& a, const MetricsRow& b) {
  auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
  if (a.fitness.size() != b.fitness.size()) return false;
  for (std::size_t i = 0; i < a.fitness.size(); ++i) {
    if (!same(a.fitness[i], b.fitness[i])) return false;
  }
  return a.iteration == b.iteration && a.episodes_done == b.episodes_done &&
         same(a.mean_return_raw, b.mean_return_raw) && same(a.mean_return_aug, b.mean_return_aug) &&
         same(a.eval_return, b.eval_return) && same(a.var_reward, b.var_reward) && same(a.diversity, b.diversity) &&
         a.w == b.w && a.c1 == b.c1 && a.c2 == b.c2 && same(a.mean_entropy, b.mean_entropy) &&
         same(a.policy_loss, b.policy_loss) && same(a.value_loss, b.value_loss);
}

// CartPole that fails once a shared step budget runs out; -1 never fails.
// Clones share the budget so a test can arm or disarm every copy at once.
class FaultyEnv final : public envs::Environment {
 public:
  FaultyEnv(std::uint64_t seed, std::shared_ptr<int> budget) : inner_(seed), budget_(std::move(budget)) {}
  const envs::EnvSpec& spec() const override { return inner_.spec(); }
  Vector reset() override { return inner_.reset(); }
  envs::StepResult step(const Action& a) override {
    if (*budget_ == 0) throw std::runtime_error("simulator crashed");
    if (*budget_ > 0) --*budget_;
    return inner_.step(a);
  }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<FaultyEnv>(*this); }
  envs::EnvState save_state() const override { return inner_.save_state(); }
  void load_state(const envs::EnvState& s) override { inner_.load_state(s); }
  void reseed(std::uint64_t seed) override { inner_.reseed(seed); }

 private:
  envs::CartPole inner_;
  std::shared_ptr<int> budget_;
};

}  // namespace

TEST_CASE("config validation") {
  AriseConfig c;
  CHECK_NOTHROW(c.validate());
  c.alpha = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AriseConfig{};
  c.num_agents = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.no_swarm = true;
  CHECK_NOTHROW(c.validate());
  c = AriseConfig{};
  c.selection_probs = {0.5, 0.2, 0.2};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(AriseConfig{}.effective_horizon(ActionSpec::discrete(2)) == 2048);
  CHECK(AriseConfig{}.effective_horizon(ActionSpec::continuous(Vector::Zero(1), Vector::Ones(1))) == 512);
}

TEST_CASE("selection distribution") {
  const auto p3 = selection_distribution(3, {0.7, 0.2, 0.1});
  CHECK(p3[0] == doctest::Approx(0.7333333333));
  CHECK(p3[1] == doctest::Approx(0.2333333333));
  CHECK(p3[2] == doctest::Approx(0.0333333333));
  const auto p2 = selection_distribution(2, {0.7, 0.2, 0.1});
  CHECK(p2[0] == doctest::Approx(0.75));
  CHECK(p2[1] == doctest::Approx(0.25));

  Rng rng(1);
  const std::vector<std::size_t> ranking{2, 0, 1};
  std::vector<int> counts(3, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[select_agent(ranking, 3, {0.7, 0.2, 0.1}, rng)];
  double chi2 = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    const double expected = p3[r] * draws;
    const double observed = counts[ranking[r]];
    CHECK(std::abs(observed / draws - p3[r]) < 0.01);
    chi2 += (observed - expected) * (observed - expected) / expected;
  }
  CHECK(chi2 < 9.21);  // df = 2, p = 0.01

  std::vector<int> cold(4, 0);
  for (int i = 0; i < 40000; ++i) ++cold[select_agent({}, 4, {0.7, 0.2, 0.1}, rng)];
  for (int c : cold) CHECK(std::abs(c / 40000.0 - 0.25) < 0.01);
}

TEST_CASE("ranking breaks ties by lower index and puts NaN last") {
  const std::vector<double> f{1.0, 3.0, 3.0, std::nan(""), -1.0};
  CHECK(rank_agents(f) == std::vector<std::size_t>{1, 2, 0, 4, 3});
}

TEST_CASE("action mixing") {
  Rng rng(1);
  const ActionSpec box = ActionSpec::continuous(Vector::Constant(1, -2.0), Vector::Constant(1, 2.0));
  const Action rl = Action::continuous(Vector::Constant(1, 1.0));
  const Action pso = Action::continuous(Vector::Constant(1, 0.0));
  CHECK(mix_action(rl, pso, 0.0, box, rng) == rl);
  CHECK(mix_action(rl, pso, 1.0, box, rng) == pso);
  CHECK(mix_action(rl, pso, 0.12, box, rng).values(0) == doctest::Approx(0.88));
  const Action far = Action::continuous(Vector::Constant(1, 9.0));
  CHECK(mix_action(far, far, 0.5, box, rng).values(0) == 2.0);

  const ActionSpec d = ActionSpec::discrete(2);
  int switched = 0;
  for (int i = 0; i < 20000; ++i) switched += mix_action(Action::discrete(0), Action::discrete(1), 0.12, d, rng).index;
  CHECK(std::abs(switched / 20000.0 - 0.12) < 0.01);
  CHECK(mix_action(Action::discrete(0), Action::discrete(1), 0.0, d, rng).index == 0);
}

TEST_CASE("broadcast copies the best agent and resets optimizers") {
  Trainer t(small_config(), small_ppo(), "cartpole");
  std::vector<AgentState> agents = t.agents();
  agents[0].optimizers.actor.state().step_count = 5;
  const ParamVector best = agents[1].policy.get_flat();
  CHECK(broadcast_best(agents, std::vector<double>{1.0, 5.0, 5.0}) == 1);
  for (const auto& a : agents) {
    CHECK(a.policy.get_flat() == best);
    CHECK(a.optimizers.actor.state().step_count == 0);
  }
}

TEST_CASE("iteration invariants") {
  Trainer t(small_config(3), small_ppo(), "cartpole");
  std::vector<Transition> seen;
  t.set_transition_observer([&](const Transition& tr) { seen.push_back(tr); });
  double last_gbest = -std::numeric_limits<double>::infinity();
  while (!t.finished()) {
    seen.clear();
    const MetricsRow row = t.train_iteration();
    CHECK(seen.size() == 256);
    // Episodes are driven by one agent from reset to termination.
    for (std::size_t i = 1; i < seen.size(); ++i) {
      if (!seen[i - 1].done) REQUIRE(seen[i].agent_id == seen[i - 1].agent_id);
    }
    for (const auto& tr : seen) {
      REQUIRE(tr.novelty >= 0.0);
      REQUIRE(tr.novelty < 1.0);
      REQUIRE(tr.reward_aug == doctest::Approx(tr.reward_env + 0.01 * tr.novelty));
    }
    for (const auto& a : t.agents()) CHECK(a.buffer.empty());
    CHECK(t.last_broadcast_source() >= 0);
    const ParamVector first = t.agents()[0].policy.get_flat();
    for (const auto& a : t.agents()) CHECK(a.policy.get_flat() == first);
    CHECK(t.swarm().gbest_fitness >= last_gbest);
    last_gbest = t.swarm().gbest_fitness;
    CHECK(row.w >= 0.3 - 1e-12);
    CHECK(row.w <= 0.7 + 1e-12);
    CHECK(row.c1 >= 0.5);
    CHECK(row.c1 <= 2.5);
    CHECK(row.fitness.size() == 3);
  }
  CHECK(t.iteration() == 4);
  CHECK(t.evaluations().size() >= 1);
  CHECK(t.counters().pso_action == 4 * 256);
}

TEST_CASE("no_swarm never touches the swarm") {
  AriseConfig c = small_config();
  c.no_swarm = true;
  c.num_agents = 1;
  c.alpha = 0.0;
  c.beta = 0.0;
  Trainer t(c, small_ppo(), "cartpole");
  std::vector<Transition> seen;
  t.set_transition_observer([&](const Transition& tr) { seen.push_back(tr); });
  t.train_iteration();
  const CallCounters& n = t.counters();
  CHECK(n.pso_action == 0);
  CHECK(n.update_particle == 0);
  CHECK(n.update_bests == 0);
  CHECK(n.adapt_coefficients == 0);
  CHECK(n.novelty == 0);
  for (const auto& tr : seen) {
    REQUIRE(tr.novelty == 0.0);
    REQUIRE(tr.reward_aug == tr.reward_env);
    REQUIRE(tr.agent_id == 0);
  }
}

TEST_CASE("identical config and seed give identical metrics") {
  Trainer a(small_config(9), small_ppo(), "pendulum");
  Trainer b(small_config(9), small_ppo(), "pendulum");
  while (!a.finished()) REQUIRE(rows_equal(a.train_iteration(), b.train_iteration()));
  Trainer c(small_config(10), small_ppo(), "pendulum");
  CHECK_FALSE(rows_equal(Trainer(small_config(9), small_ppo(), "pendulum").train_iteration(), c.train_iteration()));
}

TEST_CASE("checkpoint resume reproduces the uninterrupted run") {
  for (const std::string env : {"cartpole+shift:center-penalty-v1:10", "mountaincar-cont"}) {
    AriseConfig c = small_config(5);
    c.total_iterations = 5;
    Trainer full(c, small_ppo(), env);
    Trainer partial(c, small_ppo(), env);
    std::vector<MetricsRow> rows;
    while (!full.finished()) rows.push_back(full.train_iteration());
    partial.train_iteration();
    partial.train_iteration();
    const auto dir = temp_dir("resume");
    partial.save_checkpoint(dir);
    Trainer resumed = Trainer::load_checkpoint(dir);
    CHECK(resumed.iteration() == 2);
    for (std::size_t i = 2; i < rows.size(); ++i) REQUIRE(rows_equal(resumed.train_iteration(), rows[i]));
    for (std::size_t i = 0; i < full.agents().size(); ++i) {
      CHECK(resumed.agents()[i].policy == full.agents()[i].policy);
    }
    CHECK(resumed.evaluate(3, 1) == full.evaluate(3, 1));
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("zero iterations produce no rows and only the initial checkpoint") {
  AriseConfig c = small_config();
  c.total_iterations = 0;
  RunOptions opts;
  opts.checkpoint_dir = temp_dir("zero");
  const RunReport r = run_training(c, small_ppo(), "cartpole", {}, opts);
  CHECK(r.rows.empty());
  CHECK(std::isnan(r.final_eval_return));
  CHECK(std::filesystem::exists(opts.checkpoint_dir / "manifest.json"));
  CHECK(Trainer::load_checkpoint(opts.checkpoint_dir).iteration() == 0);
  std::filesystem::remove_all(opts.checkpoint_dir);
}

TEST_CASE("environment faults roll the iteration back") {
  auto budget = std::make_shared<int>(-1);
  EnvFactory factory = [budget](std::uint64_t seed) { return std::make_unique<FaultyEnv>(seed, budget); };
  Trainer t(small_config(), small_ppo(), factory);
  t.train_iteration();
  Trainer reference = t;
  *budget = 100;
  CHECK_THROWS_AS(t.train_iteration(), EnvironmentFault);
  *budget = -1;
  CHECK(t.iteration() == 1);
  CHECK(t.episodes_done() == reference.episodes_done());
  for (std::size_t i = 0; i < t.agents().size(); ++i) {
    CHECK(t.agents()[i].policy == reference.agents()[i].policy);
    CHECK(t.agents()[i].buffer.empty());
  }
  // The restored state continues exactly like the untouched copy.
  CHECK(rows_equal(t.train_iteration(), reference.train_iteration()));
}

TEST_CASE("convergence index") {
  std::vector<EvalRecord> e{{1, 10, 50.0}, {2, 20, 185.0}, {3, 30, 200.0}, {4, 40, 190.0}};
  CHECK(convergence_index(e) == 1);
  std::vector<EvalRecord> neg{{1, 10, -900.0}, {2, 20, -150.0}, {3, 30, -160.0}};
  CHECK(convergence_index(neg) == 1);  // threshold -165
  CHECK(convergence_index(std::vector<EvalRecord>{}) == -1);
}
