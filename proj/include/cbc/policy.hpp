#pragma once

#include <filesystem>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cbc/action_spec.hpp"
#include "cbc/dataset.hpp"
#include "cbc/nn.hpp"
#include "cbc/rng.hpp"

namespace cbc::policy {

using nn::Matrix;
using nn::Vector;

struct PolicyOutput {
  Vector mean;
  Vector log_std; // already clamped
};

/// Diagonal Gaussian policy pi(a|s) = N(mu(s), diag(sigma(s)^2)).
///
/// One backbone maps the (z-scored) state to 2*|A| outputs: the first |A| are
/// the mean, the last |A| the raw log-std, clamped to [kLogStdMin, kLogStdMax].
/// Actions are never squashed; mean_action() clips to the action bounds, the
/// density and sampling paths do not.
class GaussianPolicy {
public:
  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;

  GaussianPolicy(nn::DenseNetwork backbone, ActionSpec actions,
                 data::NormalizationStats normalizer);

  /// Two hidden ReLU layers of width `hidden`, Glorot-initialized from rng.
  static GaussianPolicy create(int state_dim, ActionSpec actions, int hidden, Rng &rng,
                               data::NormalizationStats normalizer);

  int state_dim() const { return backbone_.input_width(); }
  int action_dim() const { return actions_.dim(); }

  const nn::DenseNetwork &backbone() const { return backbone_; }
  nn::DenseNetwork &backbone() { return backbone_; }
  const ActionSpec &action_spec() const { return actions_; }
  const data::NormalizationStats &normalizer() const { return normalizer_; }

  PolicyOutput evaluate(const Vector &s) const;
  double log_prob(const Vector &s, const Vector &a) const;
  /// mu + sigma * z with z ~ N(0, I) drawn from rng; not clipped.
  Vector sample(const Vector &s, Rng &rng) const;
  /// mu(s) clipped to the action bounds.
  Vector mean_action(const Vector &s) const;
  /// Differential entropy of pi(.|s).
  double entropy(const Vector &s) const;

private:
  void check_state(const Vector &s) const;

  nn::DenseNetwork backbone_;
  ActionSpec actions_;
  data::NormalizationStats normalizer_;
};

/// Batched heads for loss evaluation: column j belongs to state j.
struct HeadsBatch {
  nn::ForwardCache cache;
  Matrix mean;
  Matrix log_std; // clamped
  Matrix std;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> log_std_active; // raw inside clamp range
};

HeadsBatch forward_heads(const GaussianPolicy &policy, const Matrix &states);

/// Backpropagates d(loss)/d(mean) and d(loss)/d(clamped log-std) to the
/// backbone parameters. The clamp passes gradient only where it is inactive.
nn::Gradients backward_heads(const GaussianPolicy &policy, const HeadsBatch &heads,
                             const Matrix &d_mean, const Matrix &d_log_std);

/// log N(a; mean, diag(exp(log_std))^2).
double gaussian_log_density(const Eigen::Ref<const Vector> &mean,
                            const Eigen::Ref<const Vector> &log_std,
                            const Eigen::Ref<const Vector> &a);

/// Adds `weight` * d(log density)/d(mean, log_std) into the given columns.
void accumulate_log_density_grad(const Eigen::Ref<const Vector> &mean,
                                 const Eigen::Ref<const Vector> &std,
                                 const Eigen::Ref<const Vector> &a, double weight,
                                 Eigen::Ref<Vector> d_mean, Eigen::Ref<Vector> d_log_std);

struct LogProbWithGrad {
  double value;
  nn::Gradients grads;
};

LogProbWithGrad log_prob_with_grad(const GaussianPolicy &policy, const Vector &s, const Vector &a);

/// Checkpoint document: network serialization plus action bounds, log-std
/// clamp range, and the state normalizer.
nlohmann::json to_json(const GaussianPolicy &policy);
GaussianPolicy policy_from_json(const nlohmann::json &doc);
void save_policy(const GaussianPolicy &policy, const std::filesystem::path &path);
GaussianPolicy load_policy(const std::filesystem::path &path);

} // namespace cbc::policy
