#include "cbc/envs.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cbc/error.hpp"

namespace cbc::envs {

namespace {

void require_width(const Vector &v, int width, const char *what) {
  if (v.size() != width) {
    throw InvalidInput(std::string(what) + ": expected width " + std::to_string(width) + ", got " +
                       std::to_string(v.size()));
  }
}

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax;
  const double dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) {
    t = std::clamp(((px - ax) * dx + (py - ay) * dy) / len2, 0.0, 1.0);
  }
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

} // namespace

std::unique_ptr<Environment> make_env(std::string_view id) {
  if (id == "absval") {
    return std::make_unique<AbsValEnv>();
  }
  if (id == "cartpole") {
    return std::make_unique<CartpoleEnv>();
  }
  if (id == "intersection") {
    return std::make_unique<IntersectionEnv>();
  }
  throw InvalidInput("unknown environment '" + std::string(id) + "'");
}

std::vector<std::string> env_ids() { return {"absval", "cartpole", "intersection"}; }

ActionSpec action_spec_for(std::string_view id) { return make_env(id)->action_spec(); }

// --- AbsVal -----------------------------------------------------------------

double absval_target(double s) { return std::abs(s) - 0.5; }

AbsValEnv::AbsValEnv() : actions_(ActionSpec::unit_box(1)), state_(Vector::Zero(1)) {}

Vector AbsValEnv::reset(Rng &rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  state_ = Vector::Constant(1, dist(rng));
  steps_ = 0;
  return state_;
}

StepResult AbsValEnv::step(const Vector &action) {
  require_width(action, 1, "absval step");
  const double a = actions_.clip(action)[0];
  const double err = a - absval_target(state_[0]);
  ++steps_;
  return StepResult{state_, -err * err, true, false, false};
}

void AbsValEnv::set_state(const Vector &state) {
  require_width(state, 1, "absval state");
  state_ = state;
  steps_ = 0;
}

nlohmann::json AbsValEnv::render() const { return {{"s", state_[0]}}; }

nlohmann::json AbsValEnv::render_schema() const {
  return {{"kind", "absval"}, {"fields", {"s"}}};
}

std::vector<double> absval_grid(int points) {
  if (points < 2) {
    throw InvalidInput("absval grid needs at least two points");
  }
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    grid[static_cast<std::size_t>(i)] = -1.0 + 2.0 * static_cast<double>(i) / (points - 1);
  }
  return grid;
}

double absval_grid_mse(const policy::GaussianPolicy &policy, int points) {
  double total = 0.0;
  for (double s : absval_grid(points)) {
    const double a = policy.mean_action(Vector::Constant(1, s))[0];
    const double err = a - absval_target(s);
    total += err * err;
  }
  return total / points;
}

// --- Cartpole ---------------------------------------------------------------

Vector cartpole_dynamics(const Vector &state, double action) {
  require_width(state, 4, "cartpole state");
  using P = CartpoleParams;
  const double x = state[0];
  const double x_dot = state[1];
  const double theta = state[2];
  const double theta_dot = state[3];

  const double force = P::kForceScale * action;
  const double cos_theta = std::cos(theta);
  const double sin_theta = std::sin(theta);
  const double temp = (force + P::kPoleMassLength * theta_dot * theta_dot * sin_theta) /
                      P::kTotalMass;
  const double theta_acc =
      (P::kGravity * sin_theta - cos_theta * temp) /
      (P::kHalfLength * (4.0 / 3.0 - P::kPoleMass * cos_theta * cos_theta / P::kTotalMass));
  const double x_acc = temp - P::kPoleMassLength * theta_acc * cos_theta / P::kTotalMass;

  Vector next(4);
  next[1] = x_dot + P::kDt * x_acc;
  next[0] = x + P::kDt * next[1];
  next[3] = theta_dot + P::kDt * theta_acc;
  next[2] = theta + P::kDt * next[3];
  return next;
}

bool cartpole_failed(const Vector &state) {
  return std::abs(state[0]) > CartpoleParams::kPositionLimit ||
         std::abs(state[2]) > CartpoleParams::kAngleLimit;
}

CartpoleEnv::CartpoleEnv() : actions_(ActionSpec::unit_box(1)), state_(Vector::Zero(4)) {}

Vector CartpoleEnv::reset(Rng &rng) {
  std::uniform_real_distribution<double> dist(-CartpoleParams::kInitRange,
                                              CartpoleParams::kInitRange);
  for (int i = 0; i < 4; ++i) {
    state_[i] = dist(rng);
  }
  steps_ = 0;
  return state_;
}

StepResult CartpoleEnv::step(const Vector &action) {
  require_width(action, 1, "cartpole action");
  state_ = cartpole_dynamics(state_, actions_.clip(action)[0]);
  ++steps_;
  const bool failed = cartpole_failed(state_);
  StepResult result;
  result.next_state = state_;
  result.reward = failed ? 0.0 : 1.0;
  result.terminal = failed || steps_ >= CartpoleParams::kMaxSteps;
  result.success = !failed && steps_ >= CartpoleParams::kMaxSteps;
  return result;
}

void CartpoleEnv::set_state(const Vector &state) {
  require_width(state, 4, "cartpole state");
  state_ = state;
  steps_ = 0;
}

nlohmann::json CartpoleEnv::render() const {
  return {{"x", state_[0]}, {"theta", state_[2]}};
}

nlohmann::json CartpoleEnv::render_schema() const {
  return {{"kind", "cartpole"},
          {"fields", {"x", "theta"}},
          {"track_limit", CartpoleParams::kPositionLimit},
          {"pole_length", 2.0 * CartpoleParams::kHalfLength},
          {"angle_limit", CartpoleParams::kAngleLimit}};
}

// --- Intersection -----------------------------------------------------------

double intersection_other_speed(const Vector &state) {
  using G = IntersectionGeometry;
  const double proximity = point_segment_distance(state[2], state[3], state[0], state[1],
                                                  G::kEgoGoalX, G::kEgoGoalY);
  const double fraction =
      std::clamp(proximity / G::kSlowdownDistance, G::kMinSpeedFraction, 1.0);
  return G::kOtherSpeed * fraction;
}

StepResult intersection_transition(const Vector &state, const Vector &action) {
  require_width(state, 4, "intersection state");
  require_width(action, 2, "intersection action");
  using G = IntersectionGeometry;
  const Vector a = action.cwiseMax(-1.0).cwiseMin(1.0);

  Vector next = state;
  const double speed = intersection_other_speed(state);
  next[0] = std::clamp(state[0] + G::kEgoStepScale * a[0], -G::kArenaHalfWidth,
                       G::kArenaHalfWidth);
  next[1] = std::clamp(state[1] + G::kEgoStepScale * a[1], -G::kArenaHalfWidth,
                       G::kArenaHalfWidth);
  next[2] = std::min(state[2] + speed, G::kOtherGoalX);
  next[3] = G::kOtherLaneY;

  const double gap = std::hypot(next[0] - next[2], next[1] - next[3]);
  const double to_goal = std::hypot(next[0] - G::kEgoGoalX, next[1] - G::kEgoGoalY);

  StepResult result;
  result.next_state = next;
  result.collision = gap < G::kCollisionDistance;
  result.success = !result.collision && to_goal < G::kGoalDistance;
  const double distance_penalty = to_goal < G::kGoalDistance ? 0.0 : G::kDistancePenalty * to_goal;
  result.reward = -distance_penalty - (result.collision ? G::kCollisionPenalty : 0.0);
  result.terminal = result.collision || result.success;
  return result;
}

IntersectionEnv::IntersectionEnv() : actions_(ActionSpec::unit_box(2)), state_(Vector::Zero(4)) {}

Vector IntersectionEnv::reset(Rng &rng) {
  using G = IntersectionGeometry;
  std::uniform_real_distribution<double> jitter(-G::kEgoJitter, G::kEgoJitter);
  state_ = Vector(4);
  state_ << jitter(rng), G::kEgoStartY, G::kOtherStartX, G::kOtherLaneY;
  steps_ = 0;
  return state_;
}

StepResult IntersectionEnv::step(const Vector &action) {
  auto result = intersection_transition(state_, action);
  state_ = result.next_state;
  ++steps_;
  if (steps_ >= IntersectionGeometry::kMaxSteps) {
    result.terminal = true;
  }
  return result;
}

void IntersectionEnv::set_state(const Vector &state) {
  require_width(state, 4, "intersection state");
  state_ = state;
  steps_ = 0;
}

nlohmann::json IntersectionEnv::render() const {
  using G = IntersectionGeometry;
  return {{"ego", {state_[0], state_[1]}},
          {"other", {state_[2], state_[3]}},
          {"ego_goal", {G::kEgoGoalX, G::kEgoGoalY}},
          {"other_goal", {G::kOtherGoalX, G::kOtherLaneY}}};
}

nlohmann::json IntersectionEnv::render_schema() const {
  using G = IntersectionGeometry;
  return {{"kind", "intersection"},
          {"fields", {"ego", "other", "ego_goal", "other_goal"}},
          {"arena_half_width", G::kArenaHalfWidth},
          {"collision_distance", G::kCollisionDistance},
          {"goal_distance", G::kGoalDistance}};
}

// --- Rollouts ---------------------------------------------------------------

RolloutResult rollout(Environment &env, const Controller &controller, int horizon, Rng &rng) {
  RolloutResult result;
  env.reset(rng);
  const int limit = std::min(horizon, env.max_steps());
  for (int t = 0; t < limit; ++t) {
    const Vector s = env.state();
    const Vector a = env.action_spec().clip(controller(s));
    const auto step = env.step(a);
    result.trajectory.push_back(data::StateActionPair{s, a});
    result.total_reward += step.reward;
    result.steps += 1;
    result.collision = result.collision || step.collision;
    result.success = result.success || step.success;
    if (step.terminal) {
      break;
    }
  }
  return result;
}

RolloutResult rollout(Environment &env, const policy::GaussianPolicy &policy, int horizon,
                      Rng &rng, bool deterministic) {
  if (policy.state_dim() != env.state_dim() || policy.action_dim() != env.action_spec().dim()) {
    throw InvalidInput("policy dimensions do not match environment '" + env.id() + "'");
  }
  if (deterministic) {
    return rollout(
        env, [&](const Vector &s) { return policy.mean_action(s); }, horizon, rng);
  }
  return rollout(
      env, [&](const Vector &s) { return policy.sample(s, rng); }, horizon, rng);
}

data::Dataset trajectory_dataset(const Environment &env, const RolloutResult &result) {
  data::Dataset ds(env.state_dim(), env.action_spec().dim(),
                   {{"env", env.id()}, {"source", "rollout"}});
  for (const auto &pair : result.trajectory) {
    ds.add(pair);
  }
  return ds;
}

double evaluate_policy(std::string_view env_id, const policy::GaussianPolicy &policy,
                       const EvaluationConfig &config) {
  if (env_id == "absval") {
    return -absval_grid_mse(policy);
  }
  if (config.rollouts < 1) {
    throw InvalidInput("evaluation needs at least one rollout");
  }
  auto env = make_env(env_id);
  const int horizon = config.horizon > 0 ? config.horizon : env->max_steps();
  Rng rng = make_stream(config.seed, Stream::EvalReset);
  double total = 0.0;
  for (int i = 0; i < config.rollouts; ++i) {
    total += rollout(*env, policy, horizon, rng, config.deterministic).total_reward;
  }
  return total / config.rollouts;
}

} // namespace cbc::envs
