#pragma once

#include <span>
#include <vector>

#include "arise/nn.hpp"
#include "arise/policy.hpp"
#include "arise/rollout.hpp"

namespace arise {

struct PPOConfig {
  double clip_epsilon = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double gamma = 0.99;
  double lambda = 0.95;
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 3e-4;
  double max_grad_norm = 0.5;

  void validate() const;
};

/// Mean of min(rho A, clip(rho, 1-eps, 1+eps) A) with rho = exp(new - old).
/// A quantity to maximize.
double surrogate_objective(std::span<const double> log_probs_new, std::span<const double> log_probs_old,
                           std::span<const double> advantages, double epsilon);

double value_loss(std::span<const double> returns, std::span<const double> values);

// Actor optimizer covers the actor network followed by log-std.
struct AgentOptimizers {
  nn::Adam actor;
  nn::Adam critic;

  void reset() {
    actor.reset();
    critic.reset();
  }
};

AgentOptimizers make_optimizers(const ActorCriticPolicy& policy, double learning_rate);

struct PPOBatch {
  Matrix states;  // one column per sample
  std::vector<Action> actions;
  Vector old_log_probs;
  Vector advantages;
  Vector returns;
};

/// Combined loss L = -(surrogate + entropy_coef * H) + value_coef * MSE, the
/// negation of the objective being maximized, with its gradient.
struct ObjectiveValue {
  double surrogate = 0.0;
  double entropy = 0.0;
  double value_loss = 0.0;
  double loss = 0.0;
  PolicyGradient gradient;
};

ObjectiveValue combined_objective(const ActorCriticPolicy& policy, const PPOBatch& batch,
                                  const PPOConfig& config);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  int gradient_steps = 0;
};

/// Runs epochs x minibatch clipped-surrogate steps on the agent's own buffer,
/// then clears it. On a non-finite loss the policy and optimizer are restored
/// to their pre-update state and NumericError is thrown.
UpdateStats update_agent(ActorCriticPolicy& policy, AgentOptimizers& optimizers, AgentBuffer& buffer,
                         const PPOConfig& config, Rng& rng);

}  // namespace arise
