#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "arise/common.hpp"
#include "arise/policy.hpp"
#include "arise/rng.hpp"

namespace arise::envs {

struct EnvSpec {
  int obs_dim = 0;
  ActionSpec action_spec;
  int max_episode_steps = 0;
};

struct StepResult {
  Vector observation;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
};

// Everything needed to restore an environment mid-episode.
struct EnvState {
  std::vector<double> physics;
  std::int64_t episode_steps = 0;
  std::int64_t episodes_started = 0;
  bool evaluation_mode = false;
  std::string rng;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual Vector reset() = 0;
  virtual StepResult step(const Action& action) = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;

  virtual EnvState save_state() const = 0;
  virtual void load_state(const EnvState& state) = 0;

  virtual void reseed(std::uint64_t seed) = 0;

  // Evaluation rollouts must not advance schedules tied to training episodes.
  virtual void set_evaluation_mode(bool on) { (void)on; }
};

// ---- pure dynamics --------------------------------------------------------

struct CartPoleState {
  double x = 0.0;
  double x_dot = 0.0;
  double theta = 0.0;
  double theta_dot = 0.0;
};

inline constexpr double kCartPoleThetaLimit = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;
inline constexpr double kCartPoleXLimit = 2.4;

/// One Euler step of the classic cart-pole (tau 0.02, force +-10).
/// Throws InvalidAction unless action is 0 or 1.
CartPoleState cartpole_dynamics(const CartPoleState& s, int action);
bool cartpole_failed(const CartPoleState& s);

struct MountainCarState {
  double position = -0.5;
  double velocity = 0.0;
};

inline constexpr double kMountainCarGoal = 0.45;

/// Returns the next state; the force is clamped to [-1, 1].
MountainCarState mountaincar_dynamics(const MountainCarState& s, double force);

struct PendulumState {
  double theta = 0.0;  // 0 is upright
  double theta_dot = 0.0;
};

PendulumState pendulum_dynamics(const PendulumState& s, double torque);
double pendulum_reward(const PendulumState& s, double torque);
double angle_normalize(double theta);

// ---- environments -----------------------------------------------------------

class CartPole final : public Environment {
 public:
  explicit CartPole(std::uint64_t seed);
  const EnvSpec& spec() const override { return spec_; }
  Vector reset() override;
  StepResult step(const Action& action) override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<CartPole>(*this); }
  EnvState save_state() const override;
  void load_state(const EnvState& state) override;
  void reseed(std::uint64_t seed) override { rng_ = Rng(seed); }

  const CartPoleState& state() const { return state_; }
  void set_state(const CartPoleState& s) { state_ = s; }

 private:
  Vector observe() const;

  EnvSpec spec_;
  CartPoleState state_;
  std::int64_t steps_ = 0;
  std::int64_t episodes_ = 0;
  Rng rng_;
};

class MountainCarContinuous final : public Environment {
 public:
  explicit MountainCarContinuous(std::uint64_t seed);
  const EnvSpec& spec() const override { return spec_; }
  Vector reset() override;
  StepResult step(const Action& action) override;
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<MountainCarContinuous>(*this);
  }
  EnvState save_state() const override;
  void load_state(const EnvState& state) override;
  void reseed(std::uint64_t seed) override { rng_ = Rng(seed); }

  const MountainCarState& state() const { return state_; }
  void set_state(const MountainCarState& s) { state_ = s; }

 private:
  EnvSpec spec_;
  MountainCarState state_;
  std::int64_t steps_ = 0;
  std::int64_t episodes_ = 0;
  Rng rng_;
};

/// Observation (cos theta, sin theta, theta_dot); torque in [-2, 2].
class Pendulum final : public Environment {
 public:
  explicit Pendulum(std::uint64_t seed);
  const EnvSpec& spec() const override { return spec_; }
  Vector reset() override;
  StepResult step(const Action& action) override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<Pendulum>(*this); }
  EnvState save_state() const override;
  void load_state(const EnvState& state) override;
  void reseed(std::uint64_t seed) override { rng_ = Rng(seed); }

  const PendulumState& state() const { return state_; }
  void set_state(const PendulumState& s) { state_ = s; }

 private:
  Vector observe() const;

  EnvSpec spec_;
  PendulumState state_;
  std::int64_t steps_ = 0;
  std::int64_t episodes_ = 0;
  Rng rng_;
};

// ---- non-stationary rewards -------------------------------------------------

struct RewardShiftConfig {
  std::string preset;  // "center-penalty-v1" or "affine"
  std::int64_t shift_episode = 0;
  std::vector<double> parameters;  // affine: {a, b}

  void validate() const;
};

/// Passes rewards through for episodes before shift_episode (0-based episode
/// index) and applies the preset transform from then on.
///   center-penalty-v1: r - 0.5 |x| / 2.4 (x = first observation component)
///   affine:            a r + b
class RewardShift final : public Environment {
 public:
  RewardShift(std::unique_ptr<Environment> inner, RewardShiftConfig config);
  RewardShift(const RewardShift& other);

  const EnvSpec& spec() const override { return inner_->spec(); }
  Vector reset() override;
  StepResult step(const Action& action) override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<RewardShift>(*this); }
  EnvState save_state() const override;
  void load_state(const EnvState& state) override;
  void reseed(std::uint64_t seed) override { inner_->reseed(seed); }
  void set_evaluation_mode(bool on) override { evaluation_mode_ = on; }

  /// Index of the episode in progress (-1 before the first reset).
  std::int64_t episode_index() const { return episodes_started_ - 1; }
  bool shifted() const { return episode_index() >= config_.shift_episode; }
  double transform(double reward, const Vector& observation) const;

  const RewardShiftConfig& config() const { return config_; }

 private:
  std::unique_ptr<Environment> inner_;
  RewardShiftConfig config_;
  std::int64_t episodes_started_ = 0;
  bool evaluation_mode_ = false;
};

/// Parses `cartpole`, `mountaincar-cont`, `pendulum`, optionally followed by
/// `+shift:<preset>:<episode>[:<param>...]`. Throws ConfigError on unknown ids.
std::unique_ptr<Environment> make_env(const std::string& id, std::uint64_t seed);

/// Validates an id without constructing an environment.
void validate_env_id(const std::string& id);

}  // namespace arise::envs
