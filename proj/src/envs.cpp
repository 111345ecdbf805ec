#include "arise/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>

namespace arise::envs {

namespace {

constexpr double kGravity = 9.8;
constexpr double kCartMass = 1.0;
constexpr double kPoleMass = 0.1;
constexpr double kTotalMass = kCartMass + kPoleMass;
constexpr double kHalfLength = 0.5;
constexpr double kPoleMassLength = kPoleMass * kHalfLength;
constexpr double kForceMag = 10.0;
constexpr double kTau = 0.02;

constexpr double kMcMinPosition = -1.2;
constexpr double kMcMaxPosition = 0.6;
constexpr double kMcMaxSpeed = 0.07;
constexpr double kMcPower = 0.0015;

constexpr double kPendulumMaxSpeed = 8.0;
constexpr double kPendulumMaxTorque = 2.0;
constexpr double kPendulumDt = 0.05;
constexpr double kPendulumG = 10.0;
constexpr double kPendulumM = 1.0;
constexpr double kPendulumL = 1.0;

double continuous_component(const Action& action) {
  if (action.values.size() != 1) throw ShapeError("expected a one-dimensional continuous action");
  if (!std::isfinite(action.values(0))) throw NumericError("non-finite action");
  return action.values(0);
}

void check_physics(const EnvState& state, std::size_t n) {
  if (state.physics.size() != n) throw ShapeError("environment state has wrong size");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(item);
  return parts;
}

}  // namespace

CartPoleState cartpole_dynamics(const CartPoleState& s, int action) {
  if (action != 0 && action != 1) throw InvalidAction("cartpole: action must be 0 or 1");
  const double force = action == 1 ? kForceMag : -kForceMag;
  const double cos_t = std::cos(s.theta);
  const double sin_t = std::sin(s.theta);
  const double temp = (force + kPoleMassLength * s.theta_dot * s.theta_dot * sin_t) / kTotalMass;
  const double theta_acc = (kGravity * sin_t - cos_t * temp) /
                           (kHalfLength * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / kTotalMass));
  const double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;

  CartPoleState next;
  next.x = s.x + kTau * s.x_dot;
  next.x_dot = s.x_dot + kTau * x_acc;
  next.theta = s.theta + kTau * s.theta_dot;
  next.theta_dot = s.theta_dot + kTau * theta_acc;
  return next;
}

bool cartpole_failed(const CartPoleState& s) {
  return s.x < -kCartPoleXLimit || s.x > kCartPoleXLimit || s.theta < -kCartPoleThetaLimit ||
         s.theta > kCartPoleThetaLimit;
}

MountainCarState mountaincar_dynamics(const MountainCarState& s, double force) {
  const double f = std::clamp(force, -1.0, 1.0);
  MountainCarState next = s;
  next.velocity += f * kMcPower - 0.0025 * std::cos(3.0 * s.position);
  next.velocity = std::clamp(next.velocity, -kMcMaxSpeed, kMcMaxSpeed);
  next.position += next.velocity;
  next.position = std::clamp(next.position, kMcMinPosition, kMcMaxPosition);
  if (next.position == kMcMinPosition && next.velocity < 0.0) next.velocity = 0.0;
  return next;
}

double angle_normalize(double theta) {
  return std::fmod(std::fmod(theta + std::numbers::pi, 2.0 * std::numbers::pi) + 2.0 * std::numbers::pi,
                   2.0 * std::numbers::pi) -
         std::numbers::pi;
}

PendulumState pendulum_dynamics(const PendulumState& s, double torque) {
  const double u = std::clamp(torque, -kPendulumMaxTorque, kPendulumMaxTorque);
  PendulumState next;
  next.theta_dot = s.theta_dot + (3.0 * kPendulumG / (2.0 * kPendulumL) * std::sin(s.theta) +
                                  3.0 / (kPendulumM * kPendulumL * kPendulumL) * u) *
                                     kPendulumDt;
  next.theta_dot = std::clamp(next.theta_dot, -kPendulumMaxSpeed, kPendulumMaxSpeed);
  next.theta = s.theta + next.theta_dot * kPendulumDt;
  return next;
}

double pendulum_reward(const PendulumState& s, double torque) {
  const double u = std::clamp(torque, -kPendulumMaxTorque, kPendulumMaxTorque);
  const double th = angle_normalize(s.theta);
  return -(th * th + 0.1 * s.theta_dot * s.theta_dot + 0.001 * u * u);
}

// ---- CartPole ---------------------------------------------------------------

CartPole::CartPole(std::uint64_t seed) : rng_(seed) {
  spec_.obs_dim = 4;
  spec_.action_spec = ActionSpec::discrete(2);
  spec_.max_episode_steps = 500;
}

Vector CartPole::observe() const {
  Vector obs(4);
  obs << state_.x, state_.x_dot, state_.theta, state_.theta_dot;
  return obs;
}

Vector CartPole::reset() {
  state_.x = rng_.uniform(-0.05, 0.05);
  state_.x_dot = rng_.uniform(-0.05, 0.05);
  state_.theta = rng_.uniform(-0.05, 0.05);
  state_.theta_dot = rng_.uniform(-0.05, 0.05);
  steps_ = 0;
  ++episodes_;
  return observe();
}

StepResult CartPole::step(const Action& action) {
  state_ = cartpole_dynamics(state_, action.index);
  ++steps_;
  StepResult r;
  r.observation = observe();
  r.reward = 1.0;
  r.terminated = cartpole_failed(state_);
  r.truncated = !r.terminated && steps_ >= spec_.max_episode_steps;
  return r;
}

EnvState CartPole::save_state() const {
  return EnvState{{state_.x, state_.x_dot, state_.theta, state_.theta_dot}, steps_, episodes_, false,
                  rng_.serialize()};
}

void CartPole::load_state(const EnvState& state) {
  check_physics(state, 4);
  state_ = {state.physics[0], state.physics[1], state.physics[2], state.physics[3]};
  steps_ = state.episode_steps;
  episodes_ = state.episodes_started;
  rng_ = Rng::deserialize(state.rng);
}

// ---- MountainCarContinuous ----------------------------------------------------

MountainCarContinuous::MountainCarContinuous(std::uint64_t seed) : rng_(seed) {
  spec_.obs_dim = 2;
  spec_.action_spec = ActionSpec::continuous(Vector::Constant(1, -1.0), Vector::Constant(1, 1.0));
  spec_.max_episode_steps = 999;
}

Vector MountainCarContinuous::reset() {
  state_.position = rng_.uniform(-0.6, -0.4);
  state_.velocity = 0.0;
  steps_ = 0;
  ++episodes_;
  return Vector{{state_.position, state_.velocity}};
}

StepResult MountainCarContinuous::step(const Action& action) {
  const double force = std::clamp(continuous_component(action), -1.0, 1.0);
  state_ = mountaincar_dynamics(state_, force);
  ++steps_;
  StepResult r;
  r.observation = Vector{{state_.position, state_.velocity}};
  r.terminated = state_.position >= kMountainCarGoal && state_.velocity >= 0.0;
  r.reward = (r.terminated ? 100.0 : 0.0) - 0.1 * force * force;
  r.truncated = !r.terminated && steps_ >= spec_.max_episode_steps;
  return r;
}

EnvState MountainCarContinuous::save_state() const {
  return EnvState{{state_.position, state_.velocity}, steps_, episodes_, false, rng_.serialize()};
}

void MountainCarContinuous::load_state(const EnvState& state) {
  check_physics(state, 2);
  state_ = {state.physics[0], state.physics[1]};
  steps_ = state.episode_steps;
  episodes_ = state.episodes_started;
  rng_ = Rng::deserialize(state.rng);
}

// ---- Pendulum -----------------------------------------------------------------

Pendulum::Pendulum(std::uint64_t seed) : rng_(seed) {
  spec_.obs_dim = 3;
  spec_.action_spec = ActionSpec::continuous(Vector::Constant(1, -kPendulumMaxTorque),
                                             Vector::Constant(1, kPendulumMaxTorque));
  spec_.max_episode_steps = 200;
}

Vector Pendulum::observe() const {
  return Vector{{std::cos(state_.theta), std::sin(state_.theta), state_.theta_dot}};
}

Vector Pendulum::reset() {
  state_.theta = rng_.uniform(-std::numbers::pi, std::numbers::pi);
  state_.theta_dot = rng_.uniform(-1.0, 1.0);
  steps_ = 0;
  ++episodes_;
  return observe();
}

StepResult Pendulum::step(const Action& action) {
  const double u = continuous_component(action);
  StepResult r;
  r.reward = pendulum_reward(state_, u);
  state_ = pendulum_dynamics(state_, u);
  ++steps_;
  r.observation = observe();
  r.terminated = false;
  r.truncated = steps_ >= spec_.max_episode_steps;
  return r;
}

EnvState Pendulum::save_state() const {
  return EnvState{{state_.theta, state_.theta_dot}, steps_, episodes_, false, rng_.serialize()};
}

void Pendulum::load_state(const EnvState& state) {
  check_physics(state, 2);
  state_ = {state.physics[0], state.physics[1]};
  steps_ = state.episode_steps;
  episodes_ = state.episodes_started;
  rng_ = Rng::deserialize(state.rng);
}

// ---- RewardShift --------------------------------------------------------------

void RewardShiftConfig::validate() const {
  if (shift_episode < 0) throw ConfigError("shift_episode", "must be >= 0");
  if (preset == "center-penalty-v1") {
    if (!parameters.empty()) throw ConfigError("shift", "center-penalty-v1 takes no parameters");
  } else if (preset == "affine") {
    if (parameters.size() != 2) throw ConfigError("shift", "affine preset needs parameters a and b");
  } else {
    throw ConfigError("shift", "unknown reward-shift preset '" + preset + "'");
  }
}

RewardShift::RewardShift(std::unique_ptr<Environment> inner, RewardShiftConfig config)
    : inner_(std::move(inner)), config_(std::move(config)) {
  config_.validate();
}

RewardShift::RewardShift(const RewardShift& other)
    : inner_(other.inner_->clone()),
      config_(other.config_),
      episodes_started_(other.episodes_started_),
      evaluation_mode_(other.evaluation_mode_) {}

Vector RewardShift::reset() {
  if (!evaluation_mode_) ++episodes_started_;
  return inner_->reset();
}

double RewardShift::transform(double reward, const Vector& observation) const {
  if (!shifted()) return reward;
  if (config_.preset == "center-penalty-v1") {
    return reward - 0.5 * std::abs(observation(0)) / kCartPoleXLimit;
  }
  return config_.parameters[0] * reward + config_.parameters[1];
}

StepResult RewardShift::step(const Action& action) {
  StepResult r = inner_->step(action);
  r.reward = transform(r.reward, r.observation);
  return r;
}

EnvState RewardShift::save_state() const {
  EnvState s = inner_->save_state();
  // Wrapper counters ride along at the end of the physics block.
  s.physics.push_back(static_cast<double>(episodes_started_));
  s.evaluation_mode = evaluation_mode_;
  return s;
}

void RewardShift::load_state(const EnvState& state) {
  if (state.physics.empty()) throw ShapeError("reward-shift state is empty");
  EnvState inner = state;
  episodes_started_ = static_cast<std::int64_t>(inner.physics.back());
  inner.physics.pop_back();
  evaluation_mode_ = state.evaluation_mode;
  inner_->load_state(inner);
}

// ---- factory ------------------------------------------------------------------

namespace {

struct ParsedId {
  std::string base;
  std::optional<RewardShiftConfig> shift;
};

ParsedId parse_env_id(const std::string& id) {
  ParsedId parsed;
  const auto plus = id.find('+');
  parsed.base = id.substr(0, plus);
  if (parsed.base != "cartpole" && parsed.base != "mountaincar-cont" && parsed.base != "pendulum") {
    throw ConfigError("env", "unknown environment id '" + parsed.base + "'");
  }
  if (plus == std::string::npos) return parsed;

  const auto parts = split(id.substr(plus + 1), ':');
  if (parts.size() < 3 || parts[0] != "shift") {
    throw ConfigError("env", "expected suffix +shift:<preset>:<episode>, got '" + id.substr(plus) + "'");
  }
  RewardShiftConfig cfg;
  cfg.preset = parts[1];
  try {
    std::size_t used = 0;
    cfg.shift_episode = std::stoll(parts[2], &used);
    if (used != parts[2].size()) throw std::invalid_argument(parts[2]);
    for (std::size_t i = 3; i < parts.size(); ++i) {
      cfg.parameters.push_back(std::stod(parts[i], &used));
      if (used != parts[i].size()) throw std::invalid_argument(parts[i]);
    }
  } catch (const std::logic_error&) {
    throw ConfigError("env", "malformed number in '" + id + "'");
  }
  cfg.validate();
  parsed.shift = std::move(cfg);
  return parsed;
}

}  // namespace

void validate_env_id(const std::string& id) { parse_env_id(id); }

std::unique_ptr<Environment> make_env(const std::string& id, std::uint64_t seed) {
  const ParsedId parsed = parse_env_id(id);
  std::unique_ptr<Environment> env;
  if (parsed.base == "cartpole") {
    env = std::make_unique<CartPole>(seed);
  } else if (parsed.base == "mountaincar-cont") {
    env = std::make_unique<MountainCarContinuous>(seed);
  } else {
    env = std::make_unique<Pendulum>(seed);
  }
  if (parsed.shift) env = std::make_unique<RewardShift>(std::move(env), *parsed.shift);
  return env;
}

}  // namespace arise::envs
