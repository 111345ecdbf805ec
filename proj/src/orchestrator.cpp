#include "arise/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace arise {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream identifiers for derive_seed.
constexpr std::uint64_t kTrainerStream = 1;
constexpr std::uint64_t kEnvStream = 2;
constexpr std::uint64_t kAgentStream = 10;
constexpr std::uint64_t kUpdateStream = 1'000'000;
constexpr std::uint64_t kEvalStream = 900'000'000;

double mean_or_nan(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

// ---- config -------------------------------------------------------------------

void AriseConfig::validate() const {
  if (num_agents < 1) throw ConfigError("arise.num_agents", "must be >= 1");
  if (!no_swarm && num_agents < 2) throw ConfigError("arise.num_agents", "swarm needs at least 2 agents");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("arise.alpha", "must lie in [0, 1]");
  if (!(beta >= 0.0)) throw ConfigError("arise.beta", "must be >= 0");
  if (horizon < 0) throw ConfigError("arise.horizon", "must be >= 0");
  if (total_iterations < 0) throw ConfigError("arise.total_iterations", "must be >= 0");
  if (max_episodes < 0) throw ConfigError("arise.max_episodes", "must be >= 0");
  double sum = 0.0;
  for (double p : selection_probs) {
    if (p < 0.0) throw ConfigError("arise.selection", "probabilities must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("arise.selection", "probabilities must sum to 1");
  if (broadcast_interval < 1) throw ConfigError("arise.broadcast_interval", "must be >= 1");
  if (hidden.empty()) throw ConfigError("arise.hidden", "need at least one hidden layer");
  for (int h : hidden) {
    if (h <= 0) throw ConfigError("arise.hidden", "layer widths must be positive");
  }
  if (!(w_end >= 0.0 && w_end <= w_start)) throw ConfigError("arise.w_end", "need 0 <= w_end <= w_start");
  if (!(c_min >= 0.0 && c_min <= c_max)) throw ConfigError("arise.c_min", "need 0 <= c_min <= c_max");
  if (c1 < c_min || c1 > c_max) throw ConfigError("arise.c1", "must lie in [c_min, c_max]");
  if (c2 < c_min || c2 > c_max) throw ConfigError("arise.c2", "must lie in [c_min, c_max]");
  if (adapt_delta < 0.0) throw ConfigError("arise.adapt_delta", "must be >= 0");
  if (!(var_low_factor >= 0.0 && var_low_factor <= var_high_factor)) {
    throw ConfigError("arise.var_low_factor", "need 0 <= var_low_factor <= var_high_factor");
  }
  if (!(median_decay > 0.0 && median_decay <= 1.0)) throw ConfigError("arise.median_decay", "must lie in (0, 1]");
  if (eval_interval < 0) throw ConfigError("eval.interval", "must be >= 0");
  if (eval_episodes < 1) throw ConfigError("eval.episodes", "must be >= 1");
}

int AriseConfig::effective_horizon(const ActionSpec& spec) const {
  if (horizon > 0) return horizon;
  return spec.is_discrete() ? 2048 : 512;
}

// ---- pipeline pieces ------------------------------------------------------------

std::vector<std::size_t> rank_agents(std::span<const double> fitness) {
  std::vector<std::size_t> order(fitness.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double fa = fitness[a];
    const double fb = fitness[b];
    if (std::isnan(fa)) return false;
    if (std::isnan(fb)) return true;
    return fa > fb;
  });
  return order;
}

std::size_t select_agent(std::span<const std::size_t> ranking, std::size_t num_agents,
                         const std::array<double, 3>& probs, Rng& rng) {
  if (num_agents == 0) throw ShapeError("select_agent: no agents");
  if (ranking.empty()) return rng.index(num_agents);
  const double u = rng.uniform();
  if (u < probs[0]) return ranking[0];
  if (u < probs[0] + probs[1]) return ranking.size() > 1 ? ranking[1] : ranking[0];
  return rng.index(num_agents);
}

std::vector<double> selection_distribution(std::size_t num_agents, const std::array<double, 3>& probs) {
  if (num_agents == 0) return {};
  const double uniform = probs[2] / static_cast<double>(num_agents);
  std::vector<double> p(num_agents, uniform);
  p[0] += probs[0];
  if (num_agents > 1) {
    p[1] += probs[1];
  } else {
    p[0] += probs[1];
  }
  return p;
}

Action mix_action(const Action& a_rl, const Action& a_pso, double alpha, const ActionSpec& spec, Rng& rng) {
  if (spec.is_discrete()) return rng.uniform() < alpha ? a_pso : a_rl;
  if (a_rl.values.size() != spec.dim || a_pso.values.size() != spec.dim) {
    throw ShapeError("mix_action: proposal dimension mismatch");
  }
  if (alpha == 0.0) return clamp_to_bounds(a_rl, spec);
  if (alpha == 1.0) return clamp_to_bounds(a_pso, spec);
  return clamp_to_bounds(Action::continuous((1.0 - alpha) * a_rl.values + alpha * a_pso.values), spec);
}

std::size_t broadcast_best(std::vector<AgentState>& agents, std::span<const double> fitness) {
  if (fitness.size() != agents.size()) throw ShapeError("broadcast_best: one fitness per agent required");
  const std::size_t best = rank_agents(fitness).front();
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (i != best) agents[i].policy = agents[best].policy;
  }
  for (auto& agent : agents) agent.optimizers.reset();
  return best;
}

int convergence_index(std::span<const EvalRecord> evals) {
  if (evals.empty()) return -1;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& e : evals) best = std::max(best, e.mean_return);
  const double threshold = best - 0.1 * std::abs(best);
  for (std::size_t i = 0; i < evals.size(); ++i) {
    if (evals[i].mean_return >= threshold) return static_cast<int>(i);
  }
  return -1;
}

// ---- trainer ----------------------------------------------------------------------

Trainer::Trainer(AriseConfig config, PPOConfig ppo, std::string env_id, RunInfo info)
    : config_(std::move(config)), ppo_(ppo), info_(std::move(info)), env_id_(std::move(env_id)) {
  const std::string id = env_id_;
  envs::validate_env_id(id);
  factory_ = [id](std::uint64_t seed) { return envs::make_env(id, seed); };
  initialize();
}

Trainer::Trainer(AriseConfig config, PPOConfig ppo, EnvFactory factory, RunInfo info)
    : config_(std::move(config)),
      ppo_(ppo),
      info_(std::move(info)),
      env_id_("custom"),
      factory_(std::move(factory)) {
  if (!factory_) throw ConfigError("env", "empty environment factory");
  initialize();
}

Trainer::Trainer(const Trainer& other)
    : config_(other.config_),
      ppo_(other.ppo_),
      info_(other.info_),
      env_id_(other.env_id_),
      factory_(other.factory_),
      env_(other.env_ ? other.env_->clone() : nullptr),
      agents_(other.agents_),
      swarm_(other.swarm_),
      variance_median_(other.variance_median_),
      rng_(other.rng_),
      horizon_(other.horizon_),
      obs_(other.obs_),
      need_reset_(other.need_reset_),
      driver_(other.driver_),
      episode_raw_(other.episode_raw_),
      episode_aug_(other.episode_aug_),
      episode_length_(other.episode_length_),
      iteration_(other.iteration_),
      episodes_done_(other.episodes_done_),
      ranking_(other.ranking_),
      next_eval_at_(other.next_eval_at_),
      episodes_(other.episodes_),
      evaluations_(other.evaluations_),
      counters_(other.counters_),
      last_broadcast_source_(other.last_broadcast_source_),
      observer_(other.observer_) {}

Trainer& Trainer::operator=(const Trainer& other) {
  if (this != &other) {
    Trainer copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void Trainer::initialize() {
  config_.validate();
  ppo_.validate();
  rng_ = Rng(derive_seed(config_.seed, kTrainerStream));
  env_ = factory_(derive_seed(config_.seed, kEnvStream));
  const envs::EnvSpec& spec = env_->spec();
  horizon_ = config_.effective_horizon(spec.action_spec);

  agents_.clear();
  for (int i = 0; i < config_.num_agents; ++i) {
    ActorCriticPolicy policy(spec.obs_dim, spec.action_spec, config_.hidden,
                             derive_seed(config_.seed, kAgentStream + static_cast<std::uint64_t>(i)));
    AgentOptimizers opt = make_optimizers(policy, ppo_.learning_rate);
    agents_.push_back(AgentState{std::move(policy), std::move(opt), AgentBuffer(static_cast<std::size_t>(horizon_)),
                                 FitnessRecord{}, i});
  }
  if (config_.swarm_active()) {
    swarm_ = swarm::make_swarm(agents_.size(), swarm::particle_bounds(spec.action_spec),
                               swarm::default_velocity_limit(spec.action_spec), rng_, config_.w_start, config_.c1,
                               config_.c2);
  } else {
    swarm_ = swarm::SwarmState{};
    swarm_.w = config_.w_start;
    swarm_.c1 = config_.c1;
    swarm_.c2 = config_.c2;
  }
  variance_median_ = swarm::ExponentialMedian(config_.median_decay);
  next_eval_at_ = config_.eval_interval;
}

bool Trainer::finished() const {
  if (iteration_ >= config_.total_iterations) return true;
  return config_.max_episodes > 0 && episodes_done_ >= config_.max_episodes;
}

double Trainer::progress() const {
  if (config_.max_episodes > 0) {
    return std::min(1.0, static_cast<double>(episodes_done_) / static_cast<double>(config_.max_episodes));
  }
  if (config_.total_iterations <= 0) return 1.0;
  return static_cast<double>(iteration_) / static_cast<double>(config_.total_iterations);
}

std::size_t Trainer::best_agent() const { return ranking_.empty() ? 0 : ranking_.front(); }

envs::StepResult Trainer::env_step(const Action& action) {
  envs::StepResult r;
  try {
    r = env_->step(action);
  } catch (const EnvironmentFault&) {
    throw;
  } catch (const std::exception& e) {
    throw EnvironmentFault(std::string("environment step failed: ") + e.what());
  }
  if (!r.observation.allFinite() || !std::isfinite(r.reward)) {
    throw EnvironmentFault("environment produced a non-finite observation or reward");
  }
  return r;
}

Vector Trainer::env_reset() {
  try {
    return env_->reset();
  } catch (const EnvironmentFault&) {
    throw;
  } catch (const std::exception& e) {
    throw EnvironmentFault(std::string("environment reset failed: ") + e.what());
  }
}

MetricsRow Trainer::train_iteration() {
  const Trainer snapshot(*this);
  try {
    return run_iteration();
  } catch (...) {
    *this = snapshot;
    throw;
  }
}

MetricsRow Trainer::run_iteration() {
  const auto t0 = std::chrono::steady_clock::now();
  const ActionSpec& spec = env_->spec().action_spec;
  const std::size_t m = agents_.size();
  const bool swarm_on = config_.swarm_active();
  const bool novelty_on = swarm_on && !config_.no_novelty;
  const double beta = novelty_on ? config_.beta : 0.0;

  std::vector<Vector> positions;
  if (swarm_on) {
    for (const auto& p : swarm_.particles) positions.push_back(p.position);
  }

  std::vector<std::vector<double>> completed(m);  // raw returns of episodes finished this iteration
  std::vector<double> segment_raw(m, 0.0);
  std::vector<double> novelty_sum(m, 0.0);
  std::vector<double> iteration_raw, iteration_aug;

  // (1) rollout with mixed actions and novelty-augmented rewards
  for (int step = 0; step < horizon_; ++step) {
    if (need_reset_) {
      obs_ = env_reset();
      driver_ = select_agent(ranking_, m, config_.selection_probs, rng_);
      episode_raw_ = episode_aug_ = 0.0;
      episode_length_ = 0;
      need_reset_ = false;
    }
    AgentState& agent = agents_[driver_];
    const ActorCriticPolicy::Sample sample = agent.policy.act(obs_, rng_);

    Action executed = sample.action;
    double log_prob = sample.log_prob;
    double novelty = 0.0;
    if (swarm_on) {
      ++counters_.pso_action;
      const Action proposal = swarm::pso_action(swarm_.particles[driver_], spec);
      executed = mix_action(sample.action, proposal, config_.alpha, spec, rng_);
      if (!(executed == sample.action)) log_prob = agent.policy.log_prob(obs_, executed);
    }
    const Action env_action = clamp_to_bounds(executed, spec);
    if (novelty_on) {
      ++counters_.novelty;
      novelty = novelty_bonus(embed_action(env_action, spec), positions, driver_);
    }

    const envs::StepResult result = env_step(env_action);
    const double reward_aug = augment_reward(result.reward, novelty, beta);
    const bool done = result.terminated || result.truncated;

    Transition t{obs_, executed, result.reward, reward_aug, done, log_prob, sample.value,
                 static_cast<int>(driver_), novelty};
    if (observer_) observer_(t);
    agent.buffer.push(std::move(t));

    segment_raw[driver_] += result.reward;
    novelty_sum[driver_] += novelty;
    episode_raw_ += result.reward;
    episode_aug_ += reward_aug;
    ++episode_length_;
    obs_ = result.observation;

    if (done) {
      episodes_.push_back(EpisodeRecord{episodes_done_, static_cast<int>(driver_), episode_raw_, episode_aug_,
                                        episode_length_});
      completed[driver_].push_back(episode_raw_);
      iteration_raw.push_back(episode_raw_);
      iteration_aug.push_back(episode_aug_);
      ++episodes_done_;
      need_reset_ = true;
    }
  }
  if (!need_reset_) agents_[driver_].buffer.bootstrap_value = agents_[driver_].policy.value(obs_);

  // (3) fitness from this iteration's data, taken before the buffers are consumed
  std::vector<double> fitness(m);
  for (std::size_t i = 0; i < m; ++i) {
    FitnessRecord& rec = agents_[i].fitness;
    const std::size_t n = agents_[i].buffer.size();
    if (n == 0) {
      rec = FitnessRecord{kNaN, kNaN, fitness_empty()};
    } else {
      rec.mean_reward = completed[i].empty() ? segment_raw[i] : mean_or_nan(completed[i]);
      rec.mean_novelty = novelty_on ? novelty_sum[i] / static_cast<double>(n) : 0.0;
      rec.fitness = arise::fitness(rec.mean_reward, rec.mean_novelty);
    }
    fitness[i] = rec.fitness;
  }

  // (2) independent PPO update per agent
  std::vector<double> entropies, policy_losses, value_losses;
  for (std::size_t i = 0; i < m; ++i) {
    if (agents_[i].buffer.empty()) continue;
    Rng update_rng(derive_seed(config_.seed, kUpdateStream + static_cast<std::uint64_t>(iteration_) * m + i));
    const UpdateStats stats =
        update_agent(agents_[i].policy, agents_[i].optimizers, agents_[i].buffer, ppo_, update_rng);
    entropies.push_back(stats.entropy);
    policy_losses.push_back(stats.policy_loss);
    value_losses.push_back(stats.value_loss);
  }

  // (4) PSO bests and particle motion
  if (swarm_on) {
    ++counters_.update_bests;
    swarm::update_bests(swarm_, fitness, positions);
    for (auto& particle : swarm_.particles) {
      ++counters_.update_particle;
      swarm::update_particle(particle, swarm_.gbest_position, swarm_.w, swarm_.c1, swarm_.c2, rng_, swarm_.v_max,
                             swarm_.bounds);
    }
  }

  // (5) broadcast
  last_broadcast_source_ = -1;
  if (!config_.no_broadcast && m > 1 && (iteration_ + 1) % config_.broadcast_interval == 0) {
    ++counters_.broadcasts;
    last_broadcast_source_ = static_cast<int>(broadcast_best(agents_, fitness));
  }

  // (6) variance-adaptive coefficients and inertia schedule
  std::vector<double> finite;
  for (double f : fitness) {
    if (std::isfinite(f)) finite.push_back(f);
  }
  const double var_reward = finite.size() >= 2 ? swarm::population_variance(finite) : kNaN;
  ++iteration_;
  if (swarm_on) {
    if (!config_.no_adaptive && std::isfinite(var_reward)) {
      if (!variance_median_.empty()) {
        const double median = variance_median_.value();
        swarm::AdaptationParams params{config_.var_low_factor * median, config_.var_high_factor * median,
                                       config_.adapt_delta, config_.c_min, config_.c_max};
        ++counters_.adapt_coefficients;
        const swarm::Coefficients next = swarm::adapt_coefficients({swarm_.c1, swarm_.c2}, finite, params);
        swarm_.c1 = next.c1;
        swarm_.c2 = next.c2;
      }
      variance_median_.push(var_reward);
    }
    swarm_.w = swarm::decay_inertia(progress(), config_.w_start, config_.w_end);
  }
  ranking_ = rank_agents(fitness);

  MetricsRow row;
  row.run_id = info_.run_id;
  row.seed = config_.seed;
  row.variant = info_.variant;
  row.env = env_id_;
  row.iteration = iteration_;
  row.episodes_done = episodes_done_;
  row.mean_return_raw = mean_or_nan(iteration_raw);
  row.mean_return_aug = mean_or_nan(iteration_aug);
  row.eval_return = kNaN;
  const bool eval_due = config_.eval_interval > 0 && episodes_done_ >= next_eval_at_;
  if (eval_due || finished()) {
    row.eval_return = evaluate(config_.eval_episodes,
                               derive_seed(config_.seed, kEvalStream + evaluations_.size()));
    evaluations_.push_back(EvalRecord{iteration_, episodes_done_, row.eval_return});
    if (config_.eval_interval > 0) {
      while (next_eval_at_ <= episodes_done_) next_eval_at_ += config_.eval_interval;
    }
  }
  row.fitness = fitness;
  row.var_reward = var_reward;
  row.diversity = swarm_on && swarm_.particles.size() >= 2 ? swarm::swarm_diversity(swarm_.particles) : kNaN;
  row.w = swarm_.w;
  row.c1 = swarm_.c1;
  row.c2 = swarm_.c2;
  row.mean_entropy = mean_or_nan(entropies);
  row.policy_loss = mean_or_nan(policy_losses);
  row.value_loss = mean_or_nan(value_losses);
  row.wall_ms = config_.record_wall_time
                    ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()
                    : 0.0;
  return row;
}

double Trainer::evaluate(int episodes, std::uint64_t seed) const {
  if (episodes < 1) throw ConfigError("eval.episodes", "must be >= 1");
  std::unique_ptr<envs::Environment> env = env_->clone();
  env->set_evaluation_mode(true);
  env->reseed(seed);
  const ActorCriticPolicy& policy = agents_[best_agent()].policy;
  const ActionSpec& spec = env->spec().action_spec;
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Vector obs = env->reset();
    double ret = 0.0;
    while (true) {
      const envs::StepResult r = env->step(clamp_to_bounds(policy.greedy(obs), spec));
      ret += r.reward;
      obs = r.observation;
      if (r.terminated || r.truncated) break;
    }
    total += ret;
  }
  return total / static_cast<double>(episodes);
}

// ---- checkpoints -------------------------------------------------------------------

namespace {

using nlohmann::json;

constexpr int kCheckpointVersion = 1;

// JSON has no literal for non-finite doubles; they travel as strings.
json encode(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

double decode(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "nan") return kNaN;
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw ConfigError("checkpoint", "bad number '" + s + "'");
  }
  return j.get<double>();
}

json encode(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(encode(v[i]));
  return out;
}

json encode(std::span<const double> v) {
  json out = json::array();
  for (double x : v) out.push_back(encode(x));
  return out;
}

Vector decode_vector(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = decode(j[i]);
  return v;
}

std::vector<double> decode_doubles(const json& j) {
  std::vector<double> v;
  for (const auto& x : j) v.push_back(decode(x));
  return v;
}

json config_to_json(const AriseConfig& c) {
  return {{"num_agents", c.num_agents},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"horizon", c.horizon},
          {"total_iterations", c.total_iterations},
          {"max_episodes", c.max_episodes},
          {"selection_probs", c.selection_probs},
          {"no_swarm", c.no_swarm},
          {"no_adaptive", c.no_adaptive},
          {"no_novelty", c.no_novelty},
          {"no_broadcast", c.no_broadcast},
          {"broadcast_interval", c.broadcast_interval},
          {"seed", c.seed},
          {"hidden", c.hidden},
          {"w_start", c.w_start},
          {"w_end", c.w_end},
          {"c1", c.c1},
          {"c2", c.c2},
          {"adapt_delta", c.adapt_delta},
          {"c_min", c.c_min},
          {"c_max", c.c_max},
          {"var_high_factor", c.var_high_factor},
          {"var_low_factor", c.var_low_factor},
          {"median_decay", c.median_decay},
          {"eval_interval", c.eval_interval},
          {"eval_episodes", c.eval_episodes},
          {"record_wall_time", c.record_wall_time}};
}

AriseConfig config_from_json(const json& j) {
  AriseConfig c;
  j.at("num_agents").get_to(c.num_agents);
  j.at("alpha").get_to(c.alpha);
  j.at("beta").get_to(c.beta);
  j.at("horizon").get_to(c.horizon);
  j.at("total_iterations").get_to(c.total_iterations);
  j.at("max_episodes").get_to(c.max_episodes);
  j.at("selection_probs").get_to(c.selection_probs);
  j.at("no_swarm").get_to(c.no_swarm);
  j.at("no_adaptive").get_to(c.no_adaptive);
  j.at("no_novelty").get_to(c.no_novelty);
  j.at("no_broadcast").get_to(c.no_broadcast);
  j.at("broadcast_interval").get_to(c.broadcast_interval);
  j.at("seed").get_to(c.seed);
  j.at("hidden").get_to(c.hidden);
  j.at("w_start").get_to(c.w_start);
  j.at("w_end").get_to(c.w_end);
  j.at("c1").get_to(c.c1);
  j.at("c2").get_to(c.c2);
  j.at("adapt_delta").get_to(c.adapt_delta);
  j.at("c_min").get_to(c.c_min);
  j.at("c_max").get_to(c.c_max);
  j.at("var_high_factor").get_to(c.var_high_factor);
  j.at("var_low_factor").get_to(c.var_low_factor);
  j.at("median_decay").get_to(c.median_decay);
  j.at("eval_interval").get_to(c.eval_interval);
  j.at("eval_episodes").get_to(c.eval_episodes);
  j.at("record_wall_time").get_to(c.record_wall_time);
  return c;
}

json ppo_to_json(const PPOConfig& p) {
  return {{"clip_epsilon", p.clip_epsilon}, {"entropy_coef", p.entropy_coef}, {"value_coef", p.value_coef},
          {"gamma", p.gamma},               {"lambda", p.lambda},             {"epochs", p.epochs},
          {"batch_size", p.batch_size},     {"learning_rate", p.learning_rate}, {"max_grad_norm", p.max_grad_norm}};
}

PPOConfig ppo_from_json(const json& j) {
  PPOConfig p;
  j.at("clip_epsilon").get_to(p.clip_epsilon);
  j.at("entropy_coef").get_to(p.entropy_coef);
  j.at("value_coef").get_to(p.value_coef);
  j.at("gamma").get_to(p.gamma);
  j.at("lambda").get_to(p.lambda);
  j.at("epochs").get_to(p.epochs);
  j.at("batch_size").get_to(p.batch_size);
  j.at("learning_rate").get_to(p.learning_rate);
  j.at("max_grad_norm").get_to(p.max_grad_norm);
  return p;
}

void write_adam(std::ostream& out, const nn::Adam& adam) {
  const nn::AdamState& s = adam.state();
  const json header = {{"step_count", s.step_count},
                       {"first_moment", s.first_moment.size()},
                       {"second_moment", s.second_moment.size()}};
  out << header.dump() << '\n';
  nn::write_f64_array(out, std::span<const double>(s.first_moment.data(), s.first_moment.size()));
  nn::write_f64_array(out, std::span<const double>(s.second_moment.data(), s.second_moment.size()));
}

void read_adam(std::istream& in, nn::Adam& adam) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("checkpoint", "truncated optimizer fragment");
  const json header = json::parse(line);
  nn::AdamState& s = adam.state();
  s.step_count = header.at("step_count").get<std::int64_t>();
  const auto m = nn::read_f64_array(in, header.at("first_moment").get<std::size_t>());
  const auto v = nn::read_f64_array(in, header.at("second_moment").get<std::size_t>());
  s.first_moment = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
  s.second_moment = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json particle_to_json(const swarm::Particle& p) {
  return {{"position", encode(p.position)},
          {"velocity", encode(p.velocity)},
          {"pbest_position", encode(p.pbest_position)},
          {"pbest_fitness", encode(p.pbest_fitness)}};
}

swarm::Particle particle_from_json(const json& j) {
  return swarm::Particle{decode_vector(j.at("position")), decode_vector(j.at("velocity")),
                         decode_vector(j.at("pbest_position")), decode(j.at("pbest_fitness"))};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint", "cannot read " + path.string());
  return in;
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& dir) const {
  namespace fs = std::filesystem;
  for (const auto& agent : agents_) {
    if (!agent.buffer.empty()) throw Error("save_checkpoint: only valid between iterations");
  }
  const fs::path target = fs::absolute(dir);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["env_id"] = env_id_;
  manifest["run_id"] = info_.run_id;
  manifest["variant"] = info_.variant;
  manifest["config"] = config_to_json(config_);
  manifest["ppo"] = ppo_to_json(ppo_);

  const envs::EnvState es = env_->save_state();
  manifest["env"] = {{"physics", encode(std::span<const double>(es.physics))},
                     {"episode_steps", es.episode_steps},
                     {"episodes_started", es.episodes_started},
                     {"evaluation_mode", es.evaluation_mode},
                     {"rng", es.rng}};

  json agents = json::array();
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    const std::string stem = "agent_" + std::to_string(i);
    {
      auto out = open_out(tmp / (stem + ".policy"));
      write_policy(out, agents_[i].policy);
    }
    {
      auto out = open_out(tmp / (stem + ".adam"));
      write_adam(out, agents_[i].optimizers.actor);
      write_adam(out, agents_[i].optimizers.critic);
    }
    const FitnessRecord& f = agents_[i].fitness;
    agents.push_back({{"policy", stem + ".policy"},
                      {"optimizer", stem + ".adam"},
                      {"particle_index", agents_[i].particle_index},
                      {"mean_reward", encode(f.mean_reward)},
                      {"mean_novelty", encode(f.mean_novelty)},
                      {"fitness", encode(f.fitness)}});
  }
  manifest["agents"] = agents;

  json particles = json::array();
  for (const auto& p : swarm_.particles) particles.push_back(particle_to_json(p));
  manifest["swarm"] = {{"particles", particles},
                       {"gbest_position", encode(swarm_.gbest_position)},
                       {"gbest_fitness", encode(swarm_.gbest_fitness)},
                       {"w", swarm_.w},
                       {"c1", swarm_.c1},
                       {"c2", swarm_.c2},
                       {"bounds_low", encode(swarm_.bounds.low)},
                       {"bounds_high", encode(swarm_.bounds.high)},
                       {"v_max", encode(swarm_.v_max)},
                       {"skipped_fitness", swarm_.skipped_fitness}};
  const auto& hist = variance_median_.history();
  manifest["variance_history"] = encode(std::vector<double>(hist.begin(), hist.end()));

  manifest["rng"] = rng_.serialize();
  manifest["horizon"] = horizon_;
  manifest["obs"] = encode(obs_);
  manifest["need_reset"] = need_reset_;
  manifest["driver"] = driver_;
  manifest["episode_raw"] = encode(episode_raw_);
  manifest["episode_aug"] = encode(episode_aug_);
  manifest["episode_length"] = episode_length_;
  manifest["iteration"] = iteration_;
  manifest["episodes_done"] = episodes_done_;
  manifest["ranking"] = ranking_;
  manifest["next_eval_at"] = next_eval_at_;
  manifest["last_broadcast_source"] = last_broadcast_source_;

  json episodes = json::array();
  for (const auto& e : episodes_) {
    episodes.push_back({e.episode, e.agent, encode(e.raw_return), encode(e.aug_return), e.length});
  }
  manifest["episodes"] = episodes;
  json evals = json::array();
  for (const auto& e : evaluations_) evals.push_back({e.iteration, e.episodes_done, encode(e.mean_return)});
  manifest["evaluations"] = evals;
  manifest["counters"] = {counters_.pso_action,         counters_.update_particle, counters_.update_bests,
                          counters_.adapt_coefficients, counters_.novelty,         counters_.broadcasts};
  {
    auto out = open_out(tmp / "manifest.json");
    out << manifest.dump(1) << '\n';
  }

  // Swap the finished bundle into place so a crash never leaves a torn checkpoint.
  const fs::path old = target.string() + ".old";
  fs::remove_all(old);
  if (fs::exists(target)) fs::rename(target, old);
  fs::rename(tmp, target);
  fs::remove_all(old);
}

Trainer Trainer::load_checkpoint(const std::filesystem::path& path, EnvFactory factory) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::is_directory(path) ? path : path.parent_path();
  json manifest;
  try {
    auto in = open_in(dir / "manifest.json");
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint", std::string("malformed manifest: ") + e.what());
  }
  if (manifest.value("version", 0) != kCheckpointVersion) {
    throw ConfigError("checkpoint.version", "unsupported checkpoint version");
  }

  try {
    Trainer t;
    t.config_ = config_from_json(manifest.at("config"));
    t.ppo_ = ppo_from_json(manifest.at("ppo"));
    t.info_ = RunInfo{manifest.at("run_id").get<std::string>(), manifest.at("variant").get<std::string>()};
    t.env_id_ = manifest.at("env_id").get<std::string>();
    if (factory) {
      t.factory_ = std::move(factory);
    } else {
      const std::string id = t.env_id_;
      envs::validate_env_id(id);
      t.factory_ = [id](std::uint64_t seed) { return envs::make_env(id, seed); };
    }
    t.config_.validate();
    t.ppo_.validate();

    t.env_ = t.factory_(derive_seed(t.config_.seed, kEnvStream));
    const json& ej = manifest.at("env");
    envs::EnvState es;
    es.physics = decode_doubles(ej.at("physics"));
    es.episode_steps = ej.at("episode_steps").get<std::int64_t>();
    es.episodes_started = ej.at("episodes_started").get<std::int64_t>();
    es.evaluation_mode = ej.at("evaluation_mode").get<bool>();
    es.rng = ej.at("rng").get<std::string>();
    t.env_->load_state(es);

    t.horizon_ = manifest.at("horizon").get<int>();
    for (const auto& aj : manifest.at("agents")) {
      auto pin = open_in(dir / aj.at("policy").get<std::string>());
      ActorCriticPolicy policy = read_policy(pin);
      AgentOptimizers opt = make_optimizers(policy, t.ppo_.learning_rate);
      auto oin = open_in(dir / aj.at("optimizer").get<std::string>());
      read_adam(oin, opt.actor);
      read_adam(oin, opt.critic);
      FitnessRecord f{decode(aj.at("mean_reward")), decode(aj.at("mean_novelty")), decode(aj.at("fitness"))};
      t.agents_.push_back(AgentState{std::move(policy), std::move(opt),
                                     AgentBuffer(static_cast<std::size_t>(t.horizon_)), f,
                                     aj.at("particle_index").get<int>()});
    }

    const json& sj = manifest.at("swarm");
    for (const auto& pj : sj.at("particles")) t.swarm_.particles.push_back(particle_from_json(pj));
    t.swarm_.gbest_position = decode_vector(sj.at("gbest_position"));
    t.swarm_.gbest_fitness = decode(sj.at("gbest_fitness"));
    t.swarm_.w = sj.at("w").get<double>();
    t.swarm_.c1 = sj.at("c1").get<double>();
    t.swarm_.c2 = sj.at("c2").get<double>();
    t.swarm_.bounds = swarm::Bounds{decode_vector(sj.at("bounds_low")), decode_vector(sj.at("bounds_high"))};
    t.swarm_.v_max = decode_vector(sj.at("v_max"));
    t.swarm_.skipped_fitness = sj.at("skipped_fitness").get<std::size_t>();
    t.variance_median_ = swarm::ExponentialMedian(t.config_.median_decay);
    const auto hist = decode_doubles(manifest.at("variance_history"));
    t.variance_median_.set_history(std::deque<double>(hist.begin(), hist.end()));

    t.rng_ = Rng::deserialize(manifest.at("rng").get<std::string>());
    t.obs_ = decode_vector(manifest.at("obs"));
    t.need_reset_ = manifest.at("need_reset").get<bool>();
    t.driver_ = manifest.at("driver").get<std::size_t>();
    t.episode_raw_ = decode(manifest.at("episode_raw"));
    t.episode_aug_ = decode(manifest.at("episode_aug"));
    t.episode_length_ = manifest.at("episode_length").get<std::int64_t>();
    t.iteration_ = manifest.at("iteration").get<int>();
    t.episodes_done_ = manifest.at("episodes_done").get<std::int64_t>();
    t.ranking_ = manifest.at("ranking").get<std::vector<std::size_t>>();
    t.next_eval_at_ = manifest.at("next_eval_at").get<std::int64_t>();
    t.last_broadcast_source_ = manifest.at("last_broadcast_source").get<int>();
    for (const auto& e : manifest.at("episodes")) {
      t.episodes_.push_back(EpisodeRecord{e[0].get<std::int64_t>(), e[1].get<int>(), decode(e[2]), decode(e[3]),
                                          e[4].get<std::int64_t>()});
    }
    for (const auto& e : manifest.at("evaluations")) {
      t.evaluations_.push_back(EvalRecord{e[0].get<int>(), e[1].get<std::int64_t>(), decode(e[2])});
    }
    const auto c = manifest.at("counters").get<std::vector<std::int64_t>>();
    if (c.size() != 6) throw ConfigError("checkpoint.counters", "expected 6 counters");
    t.counters_ = CallCounters{c[0], c[1], c[2], c[3], c[4], c[5]};
    if (t.agents_.size() != static_cast<std::size_t>(t.config_.num_agents)) {
      throw ConfigError("checkpoint.agents", "agent count does not match config");
    }
    return t;
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint", std::string("malformed manifest: ") + e.what());
  }
}

// ---- run driver ----------------------------------------------------------------------

RunReport run_training(Trainer& trainer, const RunOptions& options) {
  RunReport report;
  const bool checkpoints = !options.checkpoint_dir.empty();
  if (checkpoints) trainer.save_checkpoint(options.checkpoint_dir);
  while (!trainer.finished()) {
    MetricsRow row = trainer.train_iteration();
    if (options.on_row) options.on_row(row);
    report.rows.push_back(std::move(row));
    if (checkpoints && options.checkpoint_interval > 0 && trainer.iteration() % options.checkpoint_interval == 0) {
      trainer.save_checkpoint(options.checkpoint_dir);
    }
  }
  if (checkpoints && !report.rows.empty()) trainer.save_checkpoint(options.checkpoint_dir);

  report.episodes = trainer.episodes();
  report.evaluations = trainer.evaluations();
  report.final_eval_return = report.evaluations.empty() ? kNaN : report.evaluations.back().mean_return;
  report.convergence_eval_index = convergence_index(report.evaluations);
  if (report.convergence_eval_index >= 0) {
    report.convergence_episodes = report.evaluations[static_cast<std::size_t>(report.convergence_eval_index)].episodes_done;
  }
  report.counters = trainer.counters();
  return report;
}

RunReport run_training(const AriseConfig& config, const PPOConfig& ppo, const std::string& env_id,
                       const RunInfo& info, const RunOptions& options) {
  Trainer trainer(config, ppo, env_id, info);
  return run_training(trainer, options);
}

}  // namespace arise
