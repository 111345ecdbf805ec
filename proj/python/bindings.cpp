#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "arise/harness.hpp"

namespace py = pybind11;
using namespace arise;

namespace {

AgentBuffer make_buffer(const std::vector<double>& rewards, const std::vector<double>& values,
                        const std::vector<bool>& dones, double bootstrap) {
  if (rewards.size() != values.size() || rewards.size() != dones.size()) {
    throw ShapeError("rewards, values and dones must have equal length");
  }
  AgentBuffer buffer(rewards.size());
  for (std::size_t t = 0; t < rewards.size(); ++t) {
    Transition tr;
    tr.state = Vector::Zero(1);
    tr.action = Action::discrete(0);
    tr.reward_env = tr.reward_aug = rewards[t];
    tr.done = dones[t];
    tr.value = values[t];
    buffer.push(std::move(tr));
  }
  buffer.bootstrap_value = bootstrap;
  return buffer;
}

Action to_action(const envs::Environment& env, const py::object& a) {
  if (env.spec().action_spec.is_discrete()) return Action::discrete(a.cast<int>());
  if (py::isinstance<py::float_>(a) || py::isinstance<py::int_>(a)) {
    return Action::continuous(Vector::Constant(1, a.cast<double>()));
  }
  return Action::continuous(a.cast<Vector>());
}

py::dict row_to_dict(const MetricsRow& r) {
  py::dict d;
  d["run_id"] = r.run_id;
  d["seed"] = r.seed;
  d["variant"] = r.variant;
  d["env"] = r.env;
  d["iteration"] = r.iteration;
  d["episodes_done"] = r.episodes_done;
  d["mean_return_raw"] = r.mean_return_raw;
  d["mean_return_aug"] = r.mean_return_aug;
  d["eval_return"] = r.eval_return;
  d["fitness"] = r.fitness;
  d["var_reward"] = r.var_reward;
  d["diversity"] = r.diversity;
  d["w"] = r.w;
  d["c1"] = r.c1;
  d["c2"] = r.c2;
  d["mean_entropy"] = r.mean_entropy;
  d["policy_loss"] = r.policy_loss;
  d["value_loss"] = r.value_loss;
  d["wall_ms"] = r.wall_ms;
  return d;
}

}  // namespace

PYBIND11_MODULE(_arise, m) {
  m.doc() = "Native core of the ARISE hybrid PPO and particle swarm trainer";

  // Base class first: later registrations take precedence.
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<InvalidAction>(m, "InvalidAction", base.ptr());
  py::register_exception<EmptyBufferError>(m, "EmptyBufferError", base.ptr());
  py::register_exception<UndefinedMetric>(m, "UndefinedMetric", base.ptr());
  py::register_exception<EnvironmentFault>(m, "EnvironmentFault", base.ptr());

  m.def("derive_seed", &derive_seed, py::arg("base"), py::arg("stream"));

  py::class_<Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed") = 0)
      .def("uniform", py::overload_cast<>(&Rng::uniform))
      .def("normal", &Rng::normal)
      .def("index", &Rng::index, py::arg("n"));

  // rollout / ppo
  m.def(
      "compute_gae",
      [](const std::vector<double>& rewards, const std::vector<double>& values, const std::vector<bool>& dones,
         double bootstrap, double gamma, double lam) {
        return compute_gae(make_buffer(rewards, values, dones, bootstrap), gamma, lam);
      },
      py::arg("rewards"), py::arg("values"), py::arg("dones"), py::arg("bootstrap_value") = 0.0,
      py::arg("gamma") = 0.99, py::arg("lam") = 0.95);
  m.def("compute_returns", [](const std::vector<double>& a, const std::vector<double>& v) { return compute_returns(a, v); }, py::arg("advantages"), py::arg("values"));
  m.def(
      "normalize_advantages",
      [](std::vector<double> a) {
        normalize_advantages(a);
        return a;
      },
      py::arg("advantages"));
  m.def("surrogate_objective", [](const std::vector<double>& n, const std::vector<double>& o, const std::vector<double>& a, double eps) { return surrogate_objective(n, o, a, eps); }, py::arg("log_probs_new"), py::arg("log_probs_old"),
        py::arg("advantages"), py::arg("epsilon") = 0.2);
  m.def("value_loss", [](const std::vector<double>& r, const std::vector<double>& v) { return value_loss(r, v); }, py::arg("returns"), py::arg("values"));

  // swarm / novelty
  m.def("novelty_bonus", [](const Vector& e, const std::vector<Vector>& p, std::size_t i) { return novelty_bonus(e, p, i); }, py::arg("embedding"), py::arg("positions"), py::arg("self_index"));
  m.def("augment_reward", &augment_reward, py::arg("reward"), py::arg("novelty"), py::arg("beta"));
  m.def("population_variance", [](const std::vector<double>& x) { return swarm::population_variance(x); }, py::arg("values"));
  m.def("decay_inertia", &swarm::decay_inertia, py::arg("progress"), py::arg("w_start") = 0.7,
        py::arg("w_end") = 0.3);
  m.def(
      "adapt_coefficients",
      [](double c1, double c2, const std::vector<double>& fitnesses, double var_low, double var_high, double delta,
         double c_min, double c_max) {
        const auto c = swarm::adapt_coefficients({c1, c2}, fitnesses, {var_low, var_high, delta, c_min, c_max});
        return std::make_pair(c.c1, c.c2);
      },
      py::arg("c1"), py::arg("c2"), py::arg("fitnesses"), py::arg("var_low"), py::arg("var_high"),
      py::arg("delta") = 0.05, py::arg("c_min") = 0.5, py::arg("c_max") = 2.5);
  m.def("selection_distribution", &selection_distribution, py::arg("num_agents"),
        py::arg("probs") = std::array<double, 3>{0.7, 0.2, 0.1});
  m.def(
      "select_agent",
      [](const std::vector<std::size_t>& ranking, std::size_t num_agents, const std::array<double, 3>& probs,
         Rng& rng) { return select_agent(ranking, num_agents, probs, rng); },
      py::arg("ranking"), py::arg("num_agents"), py::arg("probs"), py::arg("rng"));

  // environments
  py::class_<envs::Environment>(m, "Environment")
      .def_property_readonly("obs_dim", [](const envs::Environment& e) { return e.spec().obs_dim; })
      .def_property_readonly("discrete", [](const envs::Environment& e) { return e.spec().action_spec.is_discrete(); })
      .def_property_readonly("action_dim", [](const envs::Environment& e) { return e.spec().action_spec.dim; })
      .def_property_readonly("max_episode_steps",
                             [](const envs::Environment& e) { return e.spec().max_episode_steps; })
      .def("reset", &envs::Environment::reset)
      .def("step", [](envs::Environment& e, const py::object& action) {
        const envs::StepResult r = e.step(to_action(e, action));
        return py::make_tuple(r.observation, r.reward, r.terminated, r.truncated);
      });
  m.def("make_env", &envs::make_env, py::arg("env_id"), py::arg("seed") = 0);

  // training
  py::class_<AriseConfig>(m, "AriseConfig")
      .def(py::init<>())
      .def_readwrite("num_agents", &AriseConfig::num_agents)
      .def_readwrite("alpha", &AriseConfig::alpha)
      .def_readwrite("beta", &AriseConfig::beta)
      .def_readwrite("horizon", &AriseConfig::horizon)
      .def_readwrite("total_iterations", &AriseConfig::total_iterations)
      .def_readwrite("max_episodes", &AriseConfig::max_episodes)
      .def_readwrite("selection_probs", &AriseConfig::selection_probs)
      .def_readwrite("no_swarm", &AriseConfig::no_swarm)
      .def_readwrite("no_adaptive", &AriseConfig::no_adaptive)
      .def_readwrite("no_novelty", &AriseConfig::no_novelty)
      .def_readwrite("no_broadcast", &AriseConfig::no_broadcast)
      .def_readwrite("broadcast_interval", &AriseConfig::broadcast_interval)
      .def_readwrite("seed", &AriseConfig::seed)
      .def_readwrite("hidden", &AriseConfig::hidden)
      .def_readwrite("eval_interval", &AriseConfig::eval_interval)
      .def_readwrite("eval_episodes", &AriseConfig::eval_episodes)
      .def("validate", &AriseConfig::validate);

  py::class_<PPOConfig>(m, "PPOConfig")
      .def(py::init<>())
      .def_readwrite("clip_epsilon", &PPOConfig::clip_epsilon)
      .def_readwrite("entropy_coef", &PPOConfig::entropy_coef)
      .def_readwrite("value_coef", &PPOConfig::value_coef)
      .def_readwrite("gamma", &PPOConfig::gamma)
      .def_readwrite("lam", &PPOConfig::lambda)
      .def_readwrite("epochs", &PPOConfig::epochs)
      .def_readwrite("batch_size", &PPOConfig::batch_size)
      .def_readwrite("learning_rate", &PPOConfig::learning_rate)
      .def_readwrite("max_grad_norm", &PPOConfig::max_grad_norm)
      .def("validate", &PPOConfig::validate);

  py::class_<Trainer>(m, "Trainer")
      .def(py::init([](const AriseConfig& c, const PPOConfig& p, const std::string& env_id, const std::string& run_id,
                       const std::string& variant) { return Trainer(c, p, env_id, RunInfo{run_id, variant}); }),
           py::arg("config"), py::arg("ppo"), py::arg("env_id"), py::arg("run_id") = "", py::arg("variant") = "arise")
      .def("train_iteration", [](Trainer& t) { return row_to_dict(t.train_iteration()); })
      .def("finished", &Trainer::finished)
      .def("evaluate", &Trainer::evaluate, py::arg("episodes") = 10, py::arg("seed") = 0)
      .def("save_checkpoint", &Trainer::save_checkpoint, py::arg("directory"))
      .def_static(
          "load_checkpoint", [](const std::filesystem::path& dir) { return Trainer::load_checkpoint(dir); },
          py::arg("directory"))
      .def_property_readonly("iteration", &Trainer::iteration)
      .def_property_readonly("episodes_done", &Trainer::episodes_done)
      .def_property_readonly("num_agents", [](const Trainer& t) { return t.agents().size(); })
      .def_property_readonly("best_agent", &Trainer::best_agent)
      .def("agent_parameters", [](const Trainer& t, std::size_t i) { return t.agents().at(i).policy.get_flat(); },
           py::arg("index"));

  // harness
  m.def(
      "run_grid",
      [](const std::string& config_text, int workers) {
        const auto config = harness::parse_config_text(config_text);
        py::gil_scoped_release release;
        const auto result = harness::run_grid(config, workers);
        std::vector<std::pair<std::string, std::string>> failures;
        for (const auto& r : result.runs) {
          if (!r.ok) failures.emplace_back(r.name, r.error);
        }
        return failures;
      },
      py::arg("config_text"), py::arg("workers") = 1,
      "Runs the grid described by a key = value document; returns (run, error) pairs for failed runs.");
  m.def(
      "summarize", [](const std::filesystem::path& dir) { return harness::summary_json(harness::summarize(dir)); },
      py::arg("directory"));
  m.def("csv_header", &harness::csv_header);
  m.def("known_variants", &harness::known_variants);
}
