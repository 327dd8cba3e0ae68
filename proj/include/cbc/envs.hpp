#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cbc/action_spec.hpp"
#include "cbc/dataset.hpp"
#include "cbc/policy.hpp"
#include "cbc/rng.hpp"

namespace cbc::envs {

using Vector = Eigen::VectorXd;

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  bool terminal = false;
  bool collision = false;
  bool success = false;
};

/// Single-owner environment state machine. step() is a pure function of the
/// current state, the step counter and the action; randomness enters only
/// through reset().
class Environment {
public:
  virtual ~Environment() = default;

  virtual std::string id() const = 0;
  virtual int state_dim() const = 0;
  virtual const ActionSpec &action_spec() const = 0;
  virtual int max_steps() const = 0;
  /// Whether a human can drive it in real time (AbsVal has no dynamics).
  virtual bool teleoperable() const { return true; }

  virtual Vector reset(Rng &rng) = 0;
  /// Clips the action to the action spec before applying it.
  virtual StepResult step(const Vector &action) = 0;

  virtual const Vector &state() const = 0;
  virtual void set_state(const Vector &state) = 0;
  virtual int steps_taken() const = 0;

  /// Env-specific geometry for a renderer (positions and angles only).
  virtual nlohmann::json render() const = 0;
  /// Static description of the render payload.
  virtual nlohmann::json render_schema() const = 0;
};

/// "absval", "cartpole" or "intersection"; throws InvalidInput otherwise.
std::unique_ptr<Environment> make_env(std::string_view id);
std::vector<std::string> env_ids();
/// Action bounds for an env id without constructing it.
ActionSpec action_spec_for(std::string_view id);

// --- AbsVal -----------------------------------------------------------------

/// Ideal action of the absolute-value task: |s| - 0.5.
double absval_target(double s);

/// One-step supervised task: s ~ U[-1, 1], reward -(a - a*)^2, always terminal.
class AbsValEnv final : public Environment {
public:
  AbsValEnv();
  std::string id() const override { return "absval"; }
  int state_dim() const override { return 1; }
  const ActionSpec &action_spec() const override { return actions_; }
  int max_steps() const override { return 1; }
  bool teleoperable() const override { return false; }
  Vector reset(Rng &rng) override;
  StepResult step(const Vector &action) override;
  const Vector &state() const override { return state_; }
  void set_state(const Vector &state) override;
  int steps_taken() const override { return steps_; }
  nlohmann::json render() const override;
  nlohmann::json render_schema() const override;

private:
  ActionSpec actions_;
  Vector state_;
  int steps_ = 0;
};

/// Grid of `points` evenly spaced states covering [-1, 1].
std::vector<double> absval_grid(int points = 101);

/// Mean squared error of the policy's clipped mean against |s| - 0.5 on the grid.
double absval_grid_mse(const policy::GaussianPolicy &policy, int points = 101);

// --- Cartpole ---------------------------------------------------------------

struct CartpoleParams {
  static constexpr double kGravity = 9.8;
  static constexpr double kCartMass = 1.0;
  static constexpr double kPoleMass = 0.1;
  static constexpr double kTotalMass = kCartMass + kPoleMass;
  static constexpr double kHalfLength = 0.5;
  static constexpr double kPoleMassLength = kPoleMass * kHalfLength;
  static constexpr double kForceScale = 10.0;
  static constexpr double kDt = 0.02;
  static constexpr double kAngleLimit = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;
  static constexpr double kPositionLimit = 2.4;
  static constexpr int kMaxSteps = 200;
  static constexpr double kInitRange = 0.05;
};

/// One semi-implicit Euler step of [x, x_dot, theta, theta_dot] under
/// normalized force a in [-1, 1] (not clipped here).
Vector cartpole_dynamics(const Vector &state, double action);
bool cartpole_failed(const Vector &state);

class CartpoleEnv final : public Environment {
public:
  CartpoleEnv();
  std::string id() const override { return "cartpole"; }
  int state_dim() const override { return 4; }
  const ActionSpec &action_spec() const override { return actions_; }
  int max_steps() const override { return CartpoleParams::kMaxSteps; }
  Vector reset(Rng &rng) override;
  /// +1 per step that does not end in failure; terminal on failure or step 200.
  StepResult step(const Vector &action) override;
  const Vector &state() const override { return state_; }
  void set_state(const Vector &state) override;
  int steps_taken() const override { return steps_; }
  nlohmann::json render() const override;
  nlohmann::json render_schema() const override;

private:
  ActionSpec actions_;
  Vector state_;
  int steps_ = 0;
};

// --- Intersection -----------------------------------------------------------

/// Fixed geometry of the two-car crossing. The ego drives south to north
/// along x ~ 0; the other agent drives west to east along y = 0.
struct IntersectionGeometry {
  static constexpr double kEgoStartY = -1.0;
  static constexpr double kEgoJitter = 0.1;
  static constexpr double kEgoGoalX = 0.0;
  static constexpr double kEgoGoalY = 1.0;
  static constexpr double kOtherStartX = -0.5;
  static constexpr double kOtherLaneY = 0.0;
  static constexpr double kOtherGoalX = 1.0;
  static constexpr double kEgoStepScale = 0.1;
  static constexpr double kOtherSpeed = 0.05;
  /// The other agent slows once it is within this distance of the ego's
  /// projected path (segment from the ego to its goal).
  static constexpr double kSlowdownDistance = 0.4;
  static constexpr double kMinSpeedFraction = 0.5;
  static constexpr double kCollisionDistance = 0.2;
  static constexpr double kGoalDistance = 0.1;
  static constexpr double kArenaHalfWidth = 1.5;
  static constexpr double kDistancePenalty = 0.1;
  static constexpr double kCollisionPenalty = 10.0;
  static constexpr int kMaxSteps = 100;
};

/// Speed of the other agent given the current state [ego_x, ego_y, other_x, other_y].
double intersection_other_speed(const Vector &state);

/// Pure transition; the step counter is handled by IntersectionEnv.
StepResult intersection_transition(const Vector &state, const Vector &action);

class IntersectionEnv final : public Environment {
public:
  IntersectionEnv();
  std::string id() const override { return "intersection"; }
  int state_dim() const override { return 4; }
  const ActionSpec &action_spec() const override { return actions_; }
  int max_steps() const override { return IntersectionGeometry::kMaxSteps; }
  Vector reset(Rng &rng) override;
  StepResult step(const Vector &action) override;
  const Vector &state() const override { return state_; }
  void set_state(const Vector &state) override;
  int steps_taken() const override { return steps_; }
  nlohmann::json render() const override;
  nlohmann::json render_schema() const override;

private:
  ActionSpec actions_;
  Vector state_;
  int steps_ = 0;
};

// --- Rollouts and evaluation ------------------------------------------------

struct RolloutResult {
  double total_reward = 0.0;
  int steps = 0;
  bool collision = false;
  bool success = false;
  std::vector<data::StateActionPair> trajectory; // (state before, executed action)
};

using Controller = std::function<Vector(const Vector &state)>;

/// Resets the env from rng, then steps at most `horizon` times or until terminal.
RolloutResult rollout(Environment &env, const Controller &controller, int horizon, Rng &rng);

/// deterministic: clipped policy mean; otherwise a reparameterized sample
/// (the env clips it).
RolloutResult rollout(Environment &env, const policy::GaussianPolicy &policy, int horizon,
                      Rng &rng, bool deterministic = true);

/// Packs a trajectory as a dataset tagged with the env id.
data::Dataset trajectory_dataset(const Environment &env, const RolloutResult &result);

struct EvaluationConfig {
  int rollouts = 20;
  int horizon = 0; // 0: the env's episode limit
  bool deterministic = true;
  std::uint64_t seed = 0;
};

/// Higher-is-better scalar: -grid MSE for AbsVal, mean episode return otherwise.
double evaluate_policy(std::string_view env_id, const policy::GaussianPolicy &policy,
                       const EvaluationConfig &config);

} // namespace cbc::envs
