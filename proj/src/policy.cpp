#include "cbc/policy.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "cbc/error.hpp"

namespace cbc::policy {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178; // 0.5 * ln(2 pi)

Vector to_vector(const std::vector<double> &v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Vector &v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

} // namespace

GaussianPolicy::GaussianPolicy(nn::DenseNetwork backbone, ActionSpec actions,
                               data::NormalizationStats normalizer)
    : backbone_(std::move(backbone)), actions_(std::move(actions)),
      normalizer_(std::move(normalizer)) {
  if (backbone_.output_width() != 2 * actions_.dim()) {
    throw InvalidInput("policy backbone must emit 2 x action_dim = " +
                       std::to_string(2 * actions_.dim()) + " outputs, has " +
                       std::to_string(backbone_.output_width()));
  }
  if (normalizer_.mean.size() != backbone_.input_width() ||
      normalizer_.std.size() != backbone_.input_width()) {
    throw InvalidInput("normalizer width does not match backbone input width");
  }
  if (actions_.high.size() != actions_.low.size() ||
      (actions_.high.array() < actions_.low.array()).any()) {
    throw InvalidInput("malformed action bounds");
  }
}

GaussianPolicy GaussianPolicy::create(int state_dim, ActionSpec actions, int hidden, Rng &rng,
                                      data::NormalizationStats normalizer) {
  if (hidden < 1) {
    throw InvalidInput("hidden width must be positive");
  }
  const int out = 2 * actions.dim();
  auto net = nn::DenseNetwork::glorot({state_dim, hidden, hidden, out}, rng);
  return GaussianPolicy(std::move(net), std::move(actions), std::move(normalizer));
}

void GaussianPolicy::check_state(const Vector &s) const {
  if (s.size() != state_dim()) {
    throw InvalidInput("state width " + std::to_string(s.size()) + " != policy state width " +
                       std::to_string(state_dim()));
  }
}

PolicyOutput GaussianPolicy::evaluate(const Vector &s) const {
  check_state(s);
  const Vector raw = nn::forward(backbone_, normalizer_.apply(s));
  const int d = action_dim();
  return PolicyOutput{raw.head(d), raw.tail(d).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax)};
}

double GaussianPolicy::log_prob(const Vector &s, const Vector &a) const {
  if (a.size() != action_dim()) {
    throw InvalidInput("action width " + std::to_string(a.size()) + " != policy action width " +
                       std::to_string(action_dim()));
  }
  const auto out = evaluate(s);
  return gaussian_log_density(out.mean, out.log_std, a);
}

Vector GaussianPolicy::sample(const Vector &s, Rng &rng) const {
  const auto out = evaluate(s);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector a(action_dim());
  for (int i = 0; i < action_dim(); ++i) {
    a[i] = out.mean[i] + std::exp(out.log_std[i]) * normal(rng);
  }
  return a;
}

Vector GaussianPolicy::mean_action(const Vector &s) const {
  return actions_.clip(evaluate(s).mean);
}

double GaussianPolicy::entropy(const Vector &s) const {
  const auto out = evaluate(s);
  return out.log_std.sum() + static_cast<double>(action_dim()) * (kHalfLog2Pi + 0.5);
}

double gaussian_log_density(const Eigen::Ref<const Vector> &mean,
                            const Eigen::Ref<const Vector> &log_std,
                            const Eigen::Ref<const Vector> &a) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double z = (a[i] - mean[i]) / std::exp(log_std[i]);
    total += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
  }
  return total;
}

void accumulate_log_density_grad(const Eigen::Ref<const Vector> &mean,
                                 const Eigen::Ref<const Vector> &std,
                                 const Eigen::Ref<const Vector> &a, double weight,
                                 Eigen::Ref<Vector> d_mean, Eigen::Ref<Vector> d_log_std) {
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double z = (a[i] - mean[i]) / std[i];
    d_mean[i] += weight * z / std[i];
    d_log_std[i] += weight * (z * z - 1.0);
  }
}

HeadsBatch forward_heads(const GaussianPolicy &policy, const Matrix &states) {
  if (states.rows() != policy.state_dim()) {
    throw InvalidInput("state width " + std::to_string(states.rows()) +
                       " != policy state width " + std::to_string(policy.state_dim()));
  }
  HeadsBatch heads;
  const Matrix raw = nn::forward_batch(policy.backbone(), policy.normalizer().apply_columns(states),
                                       &heads.cache);
  const int d = policy.action_dim();
  heads.mean = raw.topRows(d);
  const Matrix raw_log_std = raw.bottomRows(d);
  heads.log_std = raw_log_std.cwiseMax(GaussianPolicy::kLogStdMin)
                      .cwiseMin(GaussianPolicy::kLogStdMax);
  heads.std = heads.log_std.array().exp().matrix();
  heads.log_std_active = (raw_log_std.array() > GaussianPolicy::kLogStdMin) &&
                         (raw_log_std.array() < GaussianPolicy::kLogStdMax);
  return heads;
}

nn::Gradients backward_heads(const GaussianPolicy &policy, const HeadsBatch &heads,
                             const Matrix &d_mean, const Matrix &d_log_std) {
  const int d = policy.action_dim();
  Matrix d_out(2 * d, heads.mean.cols());
  d_out.topRows(d) = d_mean;
  d_out.bottomRows(d) = heads.log_std_active.select(d_log_std, 0.0);
  return nn::backward_batch(policy.backbone(), heads.cache, d_out);
}

LogProbWithGrad log_prob_with_grad(const GaussianPolicy &policy, const Vector &s, const Vector &a) {
  if (a.size() != policy.action_dim()) {
    throw InvalidInput("action width mismatch");
  }
  const auto heads = forward_heads(policy, s);
  const double value = gaussian_log_density(heads.mean.col(0), heads.log_std.col(0), a);
  Matrix d_mean = Matrix::Zero(policy.action_dim(), 1);
  Matrix d_log_std = Matrix::Zero(policy.action_dim(), 1);
  accumulate_log_density_grad(heads.mean.col(0), heads.std.col(0), a, 1.0, d_mean.col(0),
                              d_log_std.col(0));
  return LogProbWithGrad{value, backward_heads(policy, heads, d_mean, d_log_std)};
}

nlohmann::json to_json(const GaussianPolicy &policy) {
  return {
      {"format_version", 1},
      {"kind", "gaussian_policy"},
      {"network", nn::to_json(policy.backbone())},
      {"action_low", to_std(policy.action_spec().low)},
      {"action_high", to_std(policy.action_spec().high)},
      {"log_std_range", {GaussianPolicy::kLogStdMin, GaussianPolicy::kLogStdMax}},
      {"state_mean", to_std(policy.normalizer().mean)},
      {"state_std", to_std(policy.normalizer().std)},
  };
}

GaussianPolicy policy_from_json(const nlohmann::json &doc) {
  try {
    if (doc.at("kind") != "gaussian_policy" || doc.at("format_version") != 1) {
      throw InvalidInput("not a version-1 gaussian_policy checkpoint");
    }
    ActionSpec actions{to_vector(doc.at("action_low").get<std::vector<double>>()),
                       to_vector(doc.at("action_high").get<std::vector<double>>())};
    data::NormalizationStats norm{to_vector(doc.at("state_mean").get<std::vector<double>>()),
                                  to_vector(doc.at("state_std").get<std::vector<double>>())};
    return GaussianPolicy(nn::network_from_json(doc.at("network")), std::move(actions),
                          std::move(norm));
  } catch (const nlohmann::json::exception &e) {
    throw InvalidInput(std::string("malformed policy checkpoint: ") + e.what());
  }
}

void save_policy(const GaussianPolicy &policy, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open '" + path.string() + "' for writing");
  }
  out << to_json(policy).dump() << '\n';
}

GaussianPolicy load_policy(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open '" + path.string() + "'");
  }
  try {
    return policy_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error &e) {
    throw InvalidInput("policy checkpoint '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

} // namespace cbc::policy
