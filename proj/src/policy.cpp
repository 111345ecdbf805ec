#include "arise/policy.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

namespace arise {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2 pi)

Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

ActionSpec ActionSpec::discrete(int num_actions) {
  ActionSpec spec;
  spec.kind = ActionKind::kDiscrete;
  spec.dim = num_actions;
  spec.validate();
  return spec;
}

ActionSpec ActionSpec::continuous(Vector low, Vector high) {
  ActionSpec spec;
  spec.kind = ActionKind::kContinuous;
  spec.dim = static_cast<int>(low.size());
  spec.low = std::move(low);
  spec.high = std::move(high);
  spec.validate();
  return spec;
}

void ActionSpec::validate() const {
  if (dim <= 0) throw ShapeError("action spec: dimension must be positive");
  if (kind == ActionKind::kContinuous) {
    if (low.size() != dim || high.size() != dim) throw ShapeError("action spec: bounds length != dim");
    if (!(low.array() < high.array()).all()) throw ShapeError("action spec: require low < high elementwise");
  }
}

Vector embed_action(const Action& action, const ActionSpec& spec) {
  if (spec.is_discrete()) {
    if (action.index < 0 || action.index >= spec.dim) {
      throw InvalidAction("action index " + std::to_string(action.index) + " out of range");
    }
    Vector e = Vector::Zero(spec.dim);
    e(action.index) = 1.0;
    return e;
  }
  if (action.values.size() != spec.dim) throw ShapeError("continuous action has wrong dimension");
  return action.values;
}

Action clamp_to_bounds(const Action& action, const ActionSpec& spec) {
  if (spec.is_discrete()) return action;
  return Action::continuous(action.values.cwiseMax(spec.low).cwiseMin(spec.high));
}

double gaussian_log_prob(const Vector& x, const Vector& mean, const Vector& log_std) {
  const Vector z = ((x - mean).array() / log_std.array().exp()).matrix();
  return -0.5 * z.squaredNorm() - log_std.sum() - 0.5 * kLog2Pi * static_cast<double>(x.size());
}

double gaussian_entropy(const Vector& log_std) {
  return (0.5 * (kLog2Pi + 1.0) + log_std.array()).sum();
}

Vector softmax(const Vector& logits) { return log_softmax(logits).array().exp().matrix(); }

double categorical_entropy(const Vector& probs) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    if (probs(k) > 0.0) h -= probs(k) * std::log(probs(k));
  }
  return h;
}

ParamVector PolicyGradient::flat() const {
  ParamVector out(actor.size() + critic.size() + log_std.size());
  out << actor, critic, log_std;
  return out;
}

ActorCriticPolicy::ActorCriticPolicy(int obs_dim, ActionSpec spec, std::vector<int> hidden,
                                     std::uint64_t seed)
    : spec_(std::move(spec)), actor_({1, 1}), critic_({1, 1}) {
  spec_.validate();
  std::vector<int> actor_dims{obs_dim};
  actor_dims.insert(actor_dims.end(), hidden.begin(), hidden.end());
  std::vector<int> critic_dims = actor_dims;
  actor_dims.push_back(spec_.dim);
  critic_dims.push_back(1);

  std::vector<double> actor_gains(hidden.size(), std::numbers::sqrt2);
  std::vector<double> critic_gains = actor_gains;
  actor_gains.push_back(0.01);
  critic_gains.push_back(1.0);

  actor_ = nn::DenseNet::orthogonal(actor_dims, actor_gains, derive_seed(seed, 1));
  critic_ = nn::DenseNet::orthogonal(critic_dims, critic_gains, derive_seed(seed, 2));
  log_std_ = spec_.is_discrete() ? Vector() : Vector::Zero(spec_.dim);
}

ActorCriticPolicy::ActorCriticPolicy(nn::DenseNet actor, nn::DenseNet critic, Vector log_std,
                                     ActionSpec spec)
    : spec_(std::move(spec)), actor_(std::move(actor)), critic_(std::move(critic)) {
  spec_.validate();
  if (critic_.output_dim() != 1) throw InvalidArchitecture("critic output dimension must be 1");
  if (actor_.output_dim() != spec_.dim) throw InvalidArchitecture("actor output dimension != action dim");
  if (critic_.input_dim() != actor_.input_dim()) throw InvalidArchitecture("actor/critic input dims differ");
  if (spec_.is_discrete()) {
    if (log_std.size() != 0) throw InvalidArchitecture("discrete policy has no log-std");
  } else if (log_std.size() != spec_.dim) {
    throw InvalidArchitecture("log-std length != action dim");
  }
  set_log_std(log_std);
}

void ActorCriticPolicy::set_log_std(const Vector& log_std) {
  const Eigen::Index expected = spec_.is_discrete() ? 0 : spec_.dim;
  if (log_std.size() != expected) throw ShapeError("log-std length mismatch");
  log_std_ = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

ActionDistribution ActorCriticPolicy::distribution(const Vector& state) const {
  if (!state.allFinite()) throw NumericError("policy: non-finite state");
  const Vector out = actor_.forward(state);
  ActionDistribution dist;
  if (spec_.is_discrete()) {
    dist.probs = softmax(out);
  } else {
    dist.mean = out;
    dist.std = log_std_.array().exp().matrix();
  }
  return dist;
}

ActorCriticPolicy::Sample ActorCriticPolicy::act(const Vector& state, Rng& rng) const {
  if (!state.allFinite()) throw NumericError("policy: non-finite state");
  const Vector out = actor_.forward(state);
  Sample sample;
  if (spec_.is_discrete()) {
    const Vector logp = log_softmax(out);
    const double u = rng.uniform();
    double cdf = 0.0;
    int chosen = spec_.dim - 1;
    for (int k = 0; k < spec_.dim; ++k) {
      cdf += std::exp(logp(k));
      if (u < cdf) {
        chosen = k;
        break;
      }
    }
    sample.action = Action::discrete(chosen);
    sample.log_prob = logp(chosen);
  } else {
    Vector a(spec_.dim);
    for (int d = 0; d < spec_.dim; ++d) a(d) = out(d) + std::exp(log_std_(d)) * rng.normal();
    sample.log_prob = gaussian_log_prob(a, out, log_std_);
    sample.action = Action::continuous(std::move(a));
  }
  sample.value = critic_.forward(state)(0);
  return sample;
}

Action ActorCriticPolicy::greedy(const Vector& state) const {
  if (!state.allFinite()) throw NumericError("policy: non-finite state");
  const Vector out = actor_.forward(state);
  if (spec_.is_discrete()) {
    Eigen::Index best = 0;
    out.maxCoeff(&best);
    return Action::discrete(static_cast<int>(best));
  }
  return Action::continuous(out);
}

double ActorCriticPolicy::log_prob(const Vector& state, const Action& action) const {
  if (!state.allFinite()) throw NumericError("policy: non-finite state");
  check_action(action);
  const Vector out = actor_.forward(state);
  if (spec_.is_discrete()) return log_softmax(out)(action.index);
  return gaussian_log_prob(action.values, out, log_std_);
}

double ActorCriticPolicy::value(const Vector& state) const { return critic_.forward(state)(0); }

void ActorCriticPolicy::check_action(const Action& action) const {
  if (spec_.is_discrete()) {
    if (action.index < 0 || action.index >= spec_.dim) {
      throw InvalidAction("action index " + std::to_string(action.index) + " out of range [0, " +
                          std::to_string(spec_.dim) + ")");
    }
  } else if (action.values.size() != spec_.dim) {
    throw ShapeError("continuous action has wrong dimension");
  }
}

PolicyPass ActorCriticPolicy::evaluate(const Matrix& states, std::span<const Action> actions) const {
  if (static_cast<std::size_t>(states.cols()) != actions.size()) {
    throw ShapeError("evaluate: number of states != number of actions");
  }
  if (!states.allFinite()) throw NumericError("evaluate: non-finite state");
  for (const Action& a : actions) check_action(a);

  PolicyPass pass;
  pass.actor_out = actor_.forward_batch(states, &pass.actor_cache);
  pass.values = critic_.forward_batch(states, &pass.critic_cache).row(0).transpose();
  const Eigen::Index n = states.cols();
  pass.log_probs.resize(n);
  pass.entropies.resize(n);
  if (spec_.is_discrete()) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector logp = log_softmax(pass.actor_out.col(i));
      pass.log_probs(i) = logp(actions[i].index);
      pass.entropies(i) = -(logp.array().exp() * logp.array()).sum();
    }
  } else {
    const double h = gaussian_entropy(log_std_);
    for (Eigen::Index i = 0; i < n; ++i) {
      pass.log_probs(i) = gaussian_log_prob(actions[i].values, pass.actor_out.col(i), log_std_);
      pass.entropies(i) = h;
    }
  }
  return pass;
}

PolicyGradient ActorCriticPolicy::backward(const PolicyPass& pass, std::span<const Action> actions,
                                           const Vector& d_log_prob, const Vector& d_entropy,
                                           const Vector& d_value) const {
  const Eigen::Index n = pass.actor_out.cols();
  if (d_log_prob.size() != n || d_entropy.size() != n || d_value.size() != n ||
      static_cast<Eigen::Index>(actions.size()) != n) {
    throw ShapeError("policy backward: per-sample derivative lengths differ from batch");
  }
  Matrix actor_grad_out(pass.actor_out.rows(), n);
  PolicyGradient grad;
  grad.log_std = Vector::Zero(log_std_.size());

  if (spec_.is_discrete()) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector logp = log_softmax(pass.actor_out.col(i));
      const Vector p = logp.array().exp().matrix();
      const double h = -(p.array() * logp.array()).sum();
      Vector g = -d_log_prob(i) * p;
      g(actions[i].index) += d_log_prob(i);
      // dH/dz_j = -p_j (log p_j + H)
      g.array() -= d_entropy(i) * p.array() * (logp.array() + h);
      actor_grad_out.col(i) = g;
    }
  } else {
    const Vector inv_var = (-2.0 * log_std_.array()).exp().matrix();
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector diff = actions[i].values - pass.actor_out.col(i);
      actor_grad_out.col(i) = d_log_prob(i) * diff.cwiseProduct(inv_var);
      grad.log_std.array() +=
          d_log_prob(i) * (diff.array().square() * inv_var.array() - 1.0) + d_entropy(i);
    }
  }
  grad.actor = actor_.backward_batch(pass.actor_cache, actor_grad_out);
  grad.critic = critic_.backward_batch(pass.critic_cache, d_value.transpose());
  return grad;
}

ParamVector ActorCriticPolicy::get_flat() const {
  const ParamVector a = actor_.get_flat();
  const ParamVector c = critic_.get_flat();
  ParamVector out(a.size() + c.size() + log_std_.size());
  out << a, c, log_std_;
  return out;
}

void ActorCriticPolicy::set_flat(const ParamVector& values) {
  if (static_cast<std::size_t>(values.size()) != param_count()) throw ShapeError("policy set_flat: length mismatch");
  const auto na = static_cast<Eigen::Index>(actor_.param_count());
  const auto nc = static_cast<Eigen::Index>(critic_.param_count());
  actor_.set_flat(std::span<const double>(values.data(), na));
  critic_.set_flat(std::span<const double>(values.data() + na, nc));
  log_std_ = values.tail(log_std_.size());
}

std::size_t ActorCriticPolicy::param_count() const {
  return actor_.param_count() + critic_.param_count() + static_cast<std::size_t>(log_std_.size());
}

bool ActorCriticPolicy::operator==(const ActorCriticPolicy& other) const {
  return spec_.kind == other.spec_.kind && spec_.dim == other.spec_.dim && actor_ == other.actor_ &&
         critic_ == other.critic_ && log_std_ == other.log_std_;
}

void write_policy(std::ostream& out, const ActorCriticPolicy& policy) {
  const ActionSpec& spec = policy.action_spec();
  nlohmann::json header{
      {"action_kind", spec.is_discrete() ? "discrete" : "continuous"},
      {"action_dim", spec.dim},
      {"low", to_std(spec.low)},
      {"high", to_std(spec.high)},
      {"actor", {{"layer_dims", policy.actor().layer_dims()}, {"param_count", policy.actor().param_count()}}},
      {"critic", {{"layer_dims", policy.critic().layer_dims()}, {"param_count", policy.critic().param_count()}}},
      {"log_std_count", policy.log_std().size()},
  };
  out << header.dump() << '\n';
  nn::write_fragment(out, policy.actor());
  nn::write_fragment(out, policy.critic());
  nn::write_f64_array(out, std::span<const double>(policy.log_std().data(), policy.log_std().size()));
}

ActorCriticPolicy read_policy(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ShapeError("policy checkpoint: missing header");
  const auto header = nlohmann::json::parse(line);
  ActionSpec spec = header.at("action_kind") == "discrete"
                        ? ActionSpec::discrete(header.at("action_dim").get<int>())
                        : ActionSpec::continuous(from_std(header.at("low").get<std::vector<double>>()),
                                                 from_std(header.at("high").get<std::vector<double>>()));
  nn::DenseNet actor = nn::read_fragment(in);
  nn::DenseNet critic = nn::read_fragment(in);
  const auto n = header.at("log_std_count").get<std::size_t>();
  Vector log_std = from_std(nn::read_f64_array(in, n));
  return ActorCriticPolicy(std::move(actor), std::move(critic), std::move(log_std), std::move(spec));
}

}  // namespace arise
