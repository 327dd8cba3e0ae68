#include "cbc/demonstrators.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cbc/envs.hpp"
#include "cbc/error.hpp"

namespace cbc::demo {

NoiseKind parse_noise_kind(std::string_view name) {
  if (name == "uniform") {
    return NoiseKind::Uniform;
  }
  if (name == "gaussian") {
    return NoiseKind::Gaussian;
  }
  if (name == "random") {
    return NoiseKind::Random;
  }
  throw InvalidInput("unknown noise kind '" + std::string(name) +
                     "' (expected uniform, gaussian or random)");
}

std::string to_string(NoiseKind kind) {
  switch (kind) {
  case NoiseKind::Uniform:
    return "uniform";
  case NoiseKind::Gaussian:
    return "gaussian";
  case NoiseKind::Random:
    return "random";
  }
  return "unknown";
}

void NoiseModel::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw InvalidInput("noise scale must be finite and >= 0");
  }
  if (kind == NoiseKind::Random && sigma > 1.0) {
    throw InvalidInput("random noise uses sigma as a probability; it must be <= 1");
  }
}

OptimalTeacher::OptimalTeacher(std::string env_id)
    : env_id_(std::move(env_id)), actions_(envs::action_spec_for(env_id_)) {}

Vector OptimalTeacher::action(const Vector &s) const {
  if (env_id_ == "absval") {
    if (s.size() != 1) {
      throw InvalidInput("absval teacher expects a 1-D state");
    }
    return actions_.clip(Vector::Constant(1, envs::absval_target(s[0])));
  }
  if (env_id_ == "cartpole") {
    if (s.size() != 4) {
      throw InvalidInput("cartpole teacher expects a 4-D state");
    }
    double u = 0.0;
    for (int i = 0; i < 4; ++i) {
      u -= kCartpoleLqrGain[static_cast<std::size_t>(i)] * s[i];
    }
    return actions_.clip(Vector::Constant(1, u));
  }
  // intersection
  if (s.size() != 4) {
    throw InvalidInput("intersection teacher expects a 4-D state");
  }
  using G = envs::IntersectionGeometry;
  using T = IntersectionTeacherParams;
  Vector a(2);
  a[0] = (G::kEgoGoalX - s[0]) / G::kEgoStepScale;
  a[1] = (G::kEgoGoalY - s[1]) / G::kEgoStepScale;
  const bool other_passed = s[2] > s[0] + T::kPassMargin;
  if (!other_passed && s[1] < T::kCommitY) {
    a[1] = (T::kWaitLineY - s[1]) / G::kEgoStepScale;
  }
  return actions_.clip(a);
}

Vector corrupt(const Vector &a_star, const NoiseModel &noise, const ActionSpec &bounds,
               Rng &rng) {
  noise.validate();
  Vector a = a_star;
  switch (noise.kind) {
  case NoiseKind::Uniform: {
    std::uniform_real_distribution<double> eps(-noise.sigma, noise.sigma);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a[i] += eps(rng);
    }
    break;
  }
  case NoiseKind::Gaussian: {
    std::normal_distribution<double> eps(0.0, noise.sigma);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a[i] += eps(rng);
    }
    break;
  }
  case NoiseKind::Random: {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < noise.sigma) {
      std::uniform_real_distribution<double> eps(-noise.sigma, noise.sigma);
      for (Eigen::Index i = 0; i < a.size(); ++i) {
        a[i] += eps(rng);
      }
    }
    break;
  }
  }
  return bounds.clip(a);
}

data::Dataset generate_dataset(std::string_view env_id, const NoiseModel &noise,
                               std::size_t n_pairs, Rng &rng) {
  if (n_pairs < 1) {
    throw InvalidInput("generate_dataset needs n_pairs >= 1");
  }
  noise.validate();
  auto env = envs::make_env(env_id);
  const OptimalTeacher teacher{std::string(env_id)};
  nlohmann::json provenance = {
      {"env", env->id()},
      {"demonstrator", "synthetic"},
      {"noise", {{"kind", to_string(noise.kind)}, {"sigma", noise.sigma}}},
  };
  data::Dataset ds(env->state_dim(), env->action_spec().dim(), provenance);

  if (env->id() == "absval") {
    std::uniform_real_distribution<double> state_dist(-1.0, 1.0);
    while (ds.size() < n_pairs) {
      const Vector s = Vector::Constant(1, state_dist(rng));
      ds.add({s, corrupt(teacher.action(s), noise, env->action_spec(), rng)});
    }
    return ds;
  }

  std::vector<std::size_t> episode_starts;
  while (ds.size() < n_pairs) {
    episode_starts.push_back(ds.size());
    env->reset(rng);
    while (ds.size() < n_pairs) {
      const Vector s = env->state();
      const Vector a = corrupt(teacher.action(s), noise, env->action_spec(), rng);
      ds.add({s, a});
      if (env->step(a).terminal) {
        break;
      }
    }
  }
  ds.provenance()["episode_starts"] = episode_starts;
  return ds;
}

} // namespace cbc::demo
