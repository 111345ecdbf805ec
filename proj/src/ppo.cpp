#include "arise/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace arise {

void PPOConfig::validate() const {
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ConfigError("ppo.clip_epsilon", "must lie in (0, 1)");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("ppo.gamma", "must lie in [0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("ppo.lambda", "must lie in [0, 1]");
  if (epochs < 1) throw ConfigError("ppo.epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("ppo.batch_size", "must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("ppo.learning_rate", "must be positive");
  if (!(max_grad_norm > 0.0)) throw ConfigError("ppo.max_grad_norm", "must be positive");
  if (entropy_coef < 0.0) throw ConfigError("ppo.entropy_coef", "must be >= 0");
  if (value_coef < 0.0) throw ConfigError("ppo.value_coef", "must be >= 0");
}

double surrogate_objective(std::span<const double> log_probs_new, std::span<const double> log_probs_old,
                           std::span<const double> advantages, double epsilon) {
  if (log_probs_new.size() != log_probs_old.size() || log_probs_new.size() != advantages.size()) {
    throw ShapeError("surrogate_objective: length mismatch");
  }
  if (log_probs_new.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < advantages.size(); ++i) {
    const double rho = std::exp(log_probs_new[i] - log_probs_old[i]);
    if (!std::isfinite(rho)) throw NumericError("surrogate_objective: non-finite probability ratio");
    const double clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon);
    total += std::min(rho * advantages[i], clipped * advantages[i]);
  }
  return total / static_cast<double>(advantages.size());
}

double value_loss(std::span<const double> returns, std::span<const double> values) {
  if (returns.size() != values.size()) throw ShapeError("value_loss: length mismatch");
  if (returns.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < returns.size(); ++i) total += (returns[i] - values[i]) * (returns[i] - values[i]);
  return total / static_cast<double>(returns.size());
}

AgentOptimizers make_optimizers(const ActorCriticPolicy& policy, double learning_rate) {
  nn::AdamConfig cfg;
  cfg.learning_rate = learning_rate;
  const std::size_t actor_size = policy.actor().param_count() + static_cast<std::size_t>(policy.log_std().size());
  return AgentOptimizers{nn::Adam(actor_size, cfg), nn::Adam(policy.critic().param_count(), cfg)};
}

ObjectiveValue combined_objective(const ActorCriticPolicy& policy, const PPOBatch& batch,
                                  const PPOConfig& config) {
  const Eigen::Index n = batch.states.cols();
  if (n == 0) throw EmptyBufferError("combined_objective: empty batch");
  if (batch.old_log_probs.size() != n || batch.advantages.size() != n || batch.returns.size() != n) {
    throw ShapeError("combined_objective: batch fields have inconsistent lengths");
  }
  const PolicyPass pass = policy.evaluate(batch.states, batch.actions);
  const double inv_n = 1.0 / static_cast<double>(n);
  const double eps = config.clip_epsilon;

  ObjectiveValue out;
  Vector d_log_prob(n), d_entropy(n), d_value(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double rho = std::exp(pass.log_probs(i) - batch.old_log_probs(i));
    const double a = batch.advantages(i);
    const double unclipped = rho * a;
    const double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps) * a;
    out.surrogate += std::min(unclipped, clipped);
    // The clipped branch is constant in the parameters.
    d_log_prob(i) = unclipped <= clipped ? -unclipped * inv_n : 0.0;

    out.entropy += pass.entropies(i);
    d_entropy(i) = -config.entropy_coef * inv_n;

    const double err = batch.returns(i) - pass.values(i);
    out.value_loss += err * err;
    d_value(i) = -2.0 * config.value_coef * err * inv_n;
  }
  out.surrogate *= inv_n;
  out.entropy *= inv_n;
  out.value_loss *= inv_n;
  out.loss = -(out.surrogate + config.entropy_coef * out.entropy) + config.value_coef * out.value_loss;
  if (!std::isfinite(out.loss)) throw NumericError("combined_objective: non-finite loss");
  out.gradient = policy.backward(pass, batch.actions, d_log_prob, d_entropy, d_value);
  return out;
}

namespace {

PPOBatch gather(const AgentBuffer& buffer, const Matrix& states, const std::vector<double>& advantages,
                const std::vector<double>& returns, const std::vector<std::size_t>& idx) {
  PPOBatch batch;
  const auto n = static_cast<Eigen::Index>(idx.size());
  batch.states.resize(states.rows(), n);
  batch.actions.reserve(idx.size());
  batch.old_log_probs.resize(n);
  batch.advantages.resize(n);
  batch.returns.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const std::size_t i = idx[static_cast<std::size_t>(k)];
    batch.states.col(k) = states.col(static_cast<Eigen::Index>(i));
    batch.actions.push_back(buffer[i].action);
    batch.old_log_probs(k) = buffer[i].log_prob;
    batch.advantages(k) = advantages[i];
    batch.returns(k) = returns[i];
  }
  normalize_advantages(std::span<double>(batch.advantages.data(), static_cast<std::size_t>(n)));
  return batch;
}

ParamVector actor_params(const ActorCriticPolicy& policy) {
  const ParamVector a = policy.actor().get_flat();
  ParamVector out(a.size() + policy.log_std().size());
  out << a, policy.log_std();
  return out;
}

void set_actor_params(ActorCriticPolicy& policy, const ParamVector& params) {
  const auto na = static_cast<Eigen::Index>(policy.actor().param_count());
  policy.actor().set_flat(std::span<const double>(params.data(), na));
  if (params.size() > na) policy.set_log_std(params.tail(params.size() - na));
}

}  // namespace

UpdateStats update_agent(ActorCriticPolicy& policy, AgentOptimizers& optimizers, AgentBuffer& buffer,
                         const PPOConfig& config, Rng& rng) {
  config.validate();
  if (buffer.empty()) throw EmptyBufferError("update_agent: buffer is empty");

  const std::vector<double> advantages = compute_gae(buffer, config.gamma, config.lambda);
  std::vector<double> values(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) values[i] = buffer[i].value;
  const std::vector<double> returns = compute_returns(advantages, values);

  Matrix states(policy.obs_dim(), static_cast<Eigen::Index>(buffer.size()));
  for (std::size_t i = 0; i < buffer.size(); ++i) states.col(static_cast<Eigen::Index>(i)) = buffer[i].state;

  const ActorCriticPolicy policy_before = policy;
  const AgentOptimizers optimizers_before = optimizers;

  UpdateStats stats;
  try {
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      for (const auto& idx : minibatches(buffer.size(), static_cast<std::size_t>(config.batch_size), rng)) {
        const PPOBatch batch = gather(buffer, states, advantages, returns, idx);
        ObjectiveValue obj = combined_objective(policy, batch, config);

        const double norm = std::sqrt(obj.gradient.actor.squaredNorm() + obj.gradient.critic.squaredNorm() +
                                      obj.gradient.log_std.squaredNorm());
        if (!std::isfinite(norm)) throw NumericError("update_agent: non-finite gradient");
        if (norm > config.max_grad_norm) {
          const double scale = config.max_grad_norm / (norm + 1e-12);
          obj.gradient.actor *= scale;
          obj.gradient.critic *= scale;
          obj.gradient.log_std *= scale;
        }

        ParamVector actor = actor_params(policy);
        ParamVector actor_grad(actor.size());
        actor_grad << obj.gradient.actor, obj.gradient.log_std;
        optimizers.actor.step(actor, actor_grad);
        set_actor_params(policy, actor);

        ParamVector critic = policy.critic().get_flat();
        optimizers.critic.step(critic, obj.gradient.critic);
        policy.critic().set_flat(critic);

        stats.policy_loss += -obj.surrogate;
        stats.value_loss += obj.value_loss;
        stats.entropy += obj.entropy;
        ++stats.gradient_steps;
      }
    }
  } catch (const NumericError&) {
    policy = policy_before;
    optimizers = optimizers_before;
    throw;
  }

  const double steps = static_cast<double>(stats.gradient_steps);
  stats.policy_loss /= steps;
  stats.value_loss /= steps;
  stats.entropy /= steps;

  // k3 estimator of KL(old || new); non-negative term by term.
  std::vector<Action> actions;
  actions.reserve(buffer.size());
  for (const auto& t : buffer.transitions()) actions.push_back(t.action);
  const PolicyPass after = policy.evaluate(states, actions);
  double kl = 0.0;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const double log_ratio = after.log_probs(static_cast<Eigen::Index>(i)) - buffer[i].log_prob;
    kl += std::expm1(log_ratio) - log_ratio;
  }
  stats.approx_kl = kl / static_cast<double>(buffer.size());

  buffer.clear();
  return stats;
}

}  // namespace arise
