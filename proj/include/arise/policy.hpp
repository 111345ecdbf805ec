#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "arise/common.hpp"
#include "arise/nn.hpp"
#include "arise/rng.hpp"

namespace arise {

enum class ActionKind { kContinuous, kDiscrete };

struct ActionSpec {
  ActionKind kind = ActionKind::kDiscrete;
  int dim = 1;  // number of actions (discrete) or action dimension (continuous)
  Vector low;   // continuous bounds
  Vector high;

  static ActionSpec discrete(int num_actions);
  static ActionSpec continuous(Vector low, Vector high);

  bool is_discrete() const { return kind == ActionKind::kDiscrete; }
  // Dimension of the space particles and novelty embeddings live in.
  int embedding_dim() const { return dim; }
  void validate() const;
};

// A discrete action uses `index`; a continuous action uses `values`.
struct Action {
  int index = -1;
  Vector values;

  static Action discrete(int i) { return Action{i, Vector()}; }
  static Action continuous(Vector v) { return Action{-1, std::move(v)}; }

  bool operator==(const Action& other) const { return index == other.index && values == other.values; }
};

/// Action as a point in particle space: one-hot for discrete, the vector itself
/// for continuous.
Vector embed_action(const Action& action, const ActionSpec& spec);

/// Clamp a continuous action to the spec bounds; discrete actions pass through.
Action clamp_to_bounds(const Action& action, const ActionSpec& spec);

// Continuous: mean + std. Discrete: probabilities.
struct ActionDistribution {
  Vector mean;
  Vector std;
  Vector probs;
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

/// Output of a batched policy pass; retains the caches needed for backward().
struct PolicyPass {
  nn::ForwardCache actor_cache;
  nn::ForwardCache critic_cache;
  Matrix actor_out;  // logits or means, one column per sample
  Vector log_probs;
  Vector entropies;
  Vector values;
};

struct PolicyGradient {
  ParamVector actor;
  ParamVector critic;
  Vector log_std;

  ParamVector flat() const;
};

/// Actor-critic with separate actor and critic MLPs. Discrete actions use a
/// categorical head over logits; continuous actions a diagonal Gaussian whose
/// state-independent log-std is a learned parameter.
class ActorCriticPolicy {
 public:
  struct Sample {
    Action action;
    double log_prob = 0.0;
    double value = 0.0;
  };

  ActorCriticPolicy(int obs_dim, ActionSpec spec, std::vector<int> hidden, std::uint64_t seed);
  ActorCriticPolicy(nn::DenseNet actor, nn::DenseNet critic, Vector log_std, ActionSpec spec);

  const ActionSpec& action_spec() const { return spec_; }
  int obs_dim() const { return actor_.input_dim(); }
  const nn::DenseNet& actor() const { return actor_; }
  const nn::DenseNet& critic() const { return critic_; }
  nn::DenseNet& actor() { return actor_; }
  nn::DenseNet& critic() { return critic_; }
  const Vector& log_std() const { return log_std_; }
  void set_log_std(const Vector& log_std);

  ActionDistribution distribution(const Vector& state) const;
  Sample act(const Vector& state, Rng& rng) const;
  /// Mode of the action distribution (argmax or mean).
  Action greedy(const Vector& state) const;
  double log_prob(const Vector& state, const Action& action) const;
  double value(const Vector& state) const;

  /// Log-probabilities, entropies and values for a batch of (state, action)
  /// pairs; states are columns.
  PolicyPass evaluate(const Matrix& states, std::span<const Action> actions) const;

  /// Backpropagates per-sample derivatives of a scalar objective with respect
  /// to log-prob, entropy and value through both networks.
  PolicyGradient backward(const PolicyPass& pass, std::span<const Action> actions,
                          const Vector& d_log_prob, const Vector& d_entropy,
                          const Vector& d_value) const;

  /// actor | critic | log_std (empty for discrete policies).
  ParamVector get_flat() const;
  void set_flat(const ParamVector& values);
  std::size_t param_count() const;

  bool operator==(const ActorCriticPolicy& other) const;

 private:
  void check_action(const Action& action) const;

  ActionSpec spec_;
  nn::DenseNet actor_;
  nn::DenseNet critic_;
  Vector log_std_;
};

double gaussian_log_prob(const Vector& x, const Vector& mean, const Vector& log_std);
double gaussian_entropy(const Vector& log_std);
Vector softmax(const Vector& logits);
double categorical_entropy(const Vector& probs);

/// One-line JSON header naming both fragments, then actor fragment, critic
/// fragment and the raw log-std array.
void write_policy(std::ostream& out, const ActorCriticPolicy& policy);
ActorCriticPolicy read_policy(std::istream& in);

}  // namespace arise
