#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "cbc/action_spec.hpp"
#include "cbc/dataset.hpp"
#include "cbc/rng.hpp"

namespace cbc::demo {

using Vector = Eigen::VectorXd;

enum class NoiseKind { Uniform, Gaussian, Random };

NoiseKind parse_noise_kind(std::string_view name);
std::string to_string(NoiseKind kind);

/// Corruption law a = clip(a* + eps). `random` mixes exact teaching (with
/// probability 1 - sigma) and uniform noise, so there sigma must be <= 1.
struct NoiseModel {
  NoiseKind kind = NoiseKind::Uniform;
  double sigma = 0.0;

  void validate() const;
};

/// State feedback a = clip(-K s, -1, 1) about the upright equilibrium; K
/// solves the discrete Riccati equation of the linearized one-step map with
/// state cost diag(1, 1, 10, 1) and unit action cost (tools/derive_lqr.py).
inline constexpr std::array<double, 4> kCartpoleLqrGain = {
    -0.7831029666808409, -1.3483111823401936, -8.7480891612882736, -2.2202690787762496};

/// Intersection teacher: drive straight at the goal, but hold at the wait
/// line until the other car has passed the ego's lane.
struct IntersectionTeacherParams {
  static constexpr double kWaitLineY = -0.35;
  static constexpr double kCommitY = -0.15;
  static constexpr double kPassMargin = 0.3;
};

/// The ideal policy a* = pi*(s) for one of the bundled environments.
class OptimalTeacher {
public:
  explicit OptimalTeacher(std::string env_id);

  const std::string &env_id() const { return env_id_; }
  const ActionSpec &action_spec() const { return actions_; }

  Vector action(const Vector &s) const;

private:
  std::string env_id_;
  ActionSpec actions_;
};

inline Vector teacher_action(const OptimalTeacher &teacher, const Vector &s) {
  return teacher.action(s);
}

/// Per-dimension iid corruption of a*, clipped to bounds.
Vector corrupt(const Vector &a_star, const NoiseModel &noise, const ActionSpec &bounds, Rng &rng);

/// Exactly n_pairs demonstrations. Dynamic envs roll the teacher out
/// executing the corrupted action (the recorded action is the executed one),
/// starting a new episode on termination. AbsVal draws s ~ U[-1, 1].
data::Dataset generate_dataset(std::string_view env_id, const NoiseModel &noise,
                               std::size_t n_pairs, Rng &rng);

} // namespace cbc::demo
