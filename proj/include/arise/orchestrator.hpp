#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "arise/envs.hpp"
#include "arise/novelty.hpp"
#include "arise/policy.hpp"
#include "arise/ppo.hpp"
#include "arise/rollout.hpp"
#include "arise/swarm.hpp"

namespace arise {

struct AriseConfig {
  int num_agents = 3;
  double alpha = 0.12;
  double beta = 0.01;
  int horizon = 0;  // 0: 2048 for discrete actions, 512 for continuous
  int total_iterations = 100;
  std::int64_t max_episodes = 0;  // 0: no episode budget
  std::array<double, 3> selection_probs{0.70, 0.20, 0.10};  // best, second, uniform
  bool no_swarm = false;
  bool no_adaptive = false;
  bool no_novelty = false;
  bool no_broadcast = false;
  int broadcast_interval = 1;
  std::uint64_t seed = 0;
  std::vector<int> hidden{64, 64};

  double w_start = 0.7;
  double w_end = 0.3;
  double c1 = 1.5;
  double c2 = 1.5;
  double adapt_delta = 0.05;
  double c_min = 0.5;
  double c_max = 2.5;
  double var_high_factor = 1.5;
  double var_low_factor = 0.5;
  double median_decay = 0.95;

  int eval_interval = 50;  // episodes; 0 disables periodic evaluation
  int eval_episodes = 10;
  bool record_wall_time = false;

  void validate() const;
  int effective_horizon(const ActionSpec& spec) const;
  bool swarm_active() const { return !no_swarm; }
};

// ---- pipeline pieces ----------------------------------------------------------

/// Agent indices sorted by descending fitness; ties and NaN go to the lower
/// index / the back.
std::vector<std::size_t> rank_agents(std::span<const double> fitness);

/// Biased driver selection. An empty ranking (no fitness yet) is uniform.
std::size_t select_agent(std::span<const std::size_t> ranking, std::size_t num_agents,
                         const std::array<double, 3>& probs, Rng& rng);

/// Analytic selection probabilities indexed by rank position.
std::vector<double> selection_distribution(std::size_t num_agents, const std::array<double, 3>& probs);

/// Continuous: clamp((1 - alpha) a_rl + alpha a_pso). Discrete: a_pso with
/// probability alpha, otherwise a_rl.
Action mix_action(const Action& a_rl, const Action& a_pso, double alpha, const ActionSpec& spec, Rng& rng);

struct FitnessRecord {
  double mean_reward = 0.0;
  double mean_novelty = 0.0;
  double fitness = swarm::kNoFitness;
};

struct AgentState {
  ActorCriticPolicy policy;
  AgentOptimizers optimizers;
  AgentBuffer buffer;
  FitnessRecord fitness;
  int particle_index = 0;
};

/// Copies the highest-fitness agent's parameters into every agent and resets
/// every optimizer. Returns the source index (lowest index on ties).
std::size_t broadcast_best(std::vector<AgentState>& agents, std::span<const double> fitness);

// ---- training ----------------------------------------------------------------

struct MetricsRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string variant;
  std::string env;
  int iteration = 0;
  std::int64_t episodes_done = 0;
  double mean_return_raw = 0.0;  // NaN when no episode finished this iteration
  double mean_return_aug = 0.0;
  double eval_return = 0.0;  // NaN when no evaluation ran
  std::vector<double> fitness;
  double var_reward = 0.0;
  double diversity = 0.0;  // NaN without a swarm
  double w = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double mean_entropy = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double wall_ms = 0.0;
};

struct EpisodeRecord {
  std::int64_t episode = 0;
  int agent = 0;
  double raw_return = 0.0;
  double aug_return = 0.0;
  std::int64_t length = 0;
};

struct EvalRecord {
  int iteration = 0;
  std::int64_t episodes_done = 0;
  double mean_return = 0.0;
};

struct CallCounters {
  std::int64_t pso_action = 0;
  std::int64_t update_particle = 0;
  std::int64_t update_bests = 0;
  std::int64_t adapt_coefficients = 0;
  std::int64_t novelty = 0;
  std::int64_t broadcasts = 0;
};

struct RunInfo {
  std::string run_id;
  std::string variant = "arise";
};

using EnvFactory = std::function<std::unique_ptr<envs::Environment>(std::uint64_t seed)>;

/// Owns one ARISE run: agents, swarm, environment and every piece of
/// bookkeeping needed to resume exactly from a checkpoint.
class Trainer {
 public:
  Trainer(AriseConfig config, PPOConfig ppo, std::string env_id, RunInfo info = {});
  Trainer(AriseConfig config, PPOConfig ppo, EnvFactory factory, RunInfo info = {});

  Trainer(const Trainer& other);
  Trainer& operator=(const Trainer& other);
  Trainer(Trainer&&) noexcept = default;
  Trainer& operator=(Trainer&&) noexcept = default;

  /// One pass of: mixed rollout, per-agent PPO, fitness, PSO, broadcast,
  /// adaptation, optional evaluation. A failure anywhere restores the state
  /// from before the call; environment failures surface as EnvironmentFault.
  MetricsRow train_iteration();

  bool finished() const;

  /// Mean raw return of the current best agent's greedy policy (no swarm
  /// mixing) over `episodes` episodes on a copy of the training environment.
  double evaluate(int episodes, std::uint64_t seed) const;

  void save_checkpoint(const std::filesystem::path& dir) const;
  static Trainer load_checkpoint(const std::filesystem::path& dir, EnvFactory factory = {});

  const AriseConfig& config() const { return config_; }
  const PPOConfig& ppo_config() const { return ppo_; }
  const RunInfo& info() const { return info_; }
  const std::string& env_id() const { return env_id_; }
  const std::vector<AgentState>& agents() const { return agents_; }
  const swarm::SwarmState& swarm() const { return swarm_; }
  const envs::Environment& env() const { return *env_; }
  int iteration() const { return iteration_; }
  int horizon() const { return horizon_; }
  std::int64_t episodes_done() const { return episodes_done_; }
  const std::vector<EpisodeRecord>& episodes() const { return episodes_; }
  const std::vector<EvalRecord>& evaluations() const { return evaluations_; }
  const CallCounters& counters() const { return counters_; }
  std::size_t best_agent() const;
  int last_broadcast_source() const { return last_broadcast_source_; }

  /// Test hook: sees every transition as it is stored. Not saved in checkpoints.
  void set_transition_observer(std::function<void(const Transition&)> observer) {
    observer_ = std::move(observer);
  }

 private:
  Trainer() = default;
  void initialize();
  MetricsRow run_iteration();
  envs::StepResult env_step(const Action& action);
  Vector env_reset();
  double progress() const;

  AriseConfig config_;
  PPOConfig ppo_;
  RunInfo info_;
  std::string env_id_;
  EnvFactory factory_;

  std::unique_ptr<envs::Environment> env_;
  std::vector<AgentState> agents_;
  swarm::SwarmState swarm_;
  swarm::ExponentialMedian variance_median_;
  Rng rng_;
  int horizon_ = 0;

  Vector obs_;
  bool need_reset_ = true;
  std::size_t driver_ = 0;
  double episode_raw_ = 0.0;
  double episode_aug_ = 0.0;
  std::int64_t episode_length_ = 0;

  int iteration_ = 0;
  std::int64_t episodes_done_ = 0;
  std::vector<std::size_t> ranking_;
  std::int64_t next_eval_at_ = 0;
  std::vector<EpisodeRecord> episodes_;
  std::vector<EvalRecord> evaluations_;
  CallCounters counters_;
  int last_broadcast_source_ = -1;

  std::function<void(const Transition&)> observer_;
};

struct RunOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  int checkpoint_interval = 0;           // iterations; 0: initial and final only
  std::function<void(const MetricsRow&)> on_row;
};

struct RunReport {
  std::vector<MetricsRow> rows;
  std::vector<EpisodeRecord> episodes;
  std::vector<EvalRecord> evaluations;
  double final_eval_return = 0.0;  // NaN if never evaluated
  int convergence_eval_index = -1;
  std::int64_t convergence_episodes = -1;
  CallCounters counters;
};

/// First evaluation reaching max - 0.1 |max| (0.9 max for non-negative
/// returns). Returns the index into `evals`, or -1 if empty.
int convergence_index(std::span<const EvalRecord> evals);

RunReport run_training(const AriseConfig& config, const PPOConfig& ppo, const std::string& env_id,
                       const RunInfo& info = {}, const RunOptions& options = {});
RunReport run_training(Trainer& trainer, const RunOptions& options = {});

}  // namespace arise
