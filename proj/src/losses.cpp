#include "cbc/losses.hpp"

#include <cmath>
#include <random>
#include <string>

#include "cbc/error.hpp"

namespace cbc::losses {

namespace {

void require_non_empty(std::size_t n, const char *what) {
  if (n == 0) {
    throw InvalidInput(std::string(what) + ": empty batch");
  }
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

} // namespace

PairBatch make_pair_batch(std::span<const data::StateActionPair> pairs) {
  PairBatch batch;
  if (pairs.empty()) {
    return batch;
  }
  const auto n = static_cast<Eigen::Index>(pairs.size());
  batch.states.resize(pairs.front().s.size(), n);
  batch.actions.resize(pairs.front().a.size(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto &p = pairs[static_cast<std::size_t>(j)];
    if (p.s.size() != batch.states.rows() || p.a.size() != batch.actions.rows()) {
      throw InvalidInput("pairs of mixed dimensions in one batch");
    }
    batch.states.col(j) = p.s;
    batch.actions.col(j) = p.a;
  }
  return batch;
}

PairBatch make_pair_batch(const data::Dataset &ds, std::span<const std::size_t> indices) {
  PairBatch batch;
  const auto n = static_cast<Eigen::Index>(indices.size());
  batch.states.resize(ds.state_dim(), n);
  batch.actions.resize(ds.action_dim(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto &p = ds[indices[static_cast<std::size_t>(j)]];
    batch.states.col(j) = p.s;
    batch.actions.col(j) = p.a;
  }
  return batch;
}

CounterfactualBatch CounterfactualBatch::subset(std::span<const std::size_t> indices) const {
  CounterfactualBatch out;
  out.delta = delta;
  out.samples_per_pair = samples_per_pair;
  out.states.resize(states.rows(), static_cast<Eigen::Index>(indices.size()));
  out.sets.reserve(indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] >= sets.size()) {
      throw InvalidInput("counterfactual subset index out of range");
    }
    out.states.col(static_cast<Eigen::Index>(j)) = states.col(static_cast<Eigen::Index>(indices[j]));
    out.sets.push_back(sets[indices[j]]);
  }
  return out;
}

CounterfactualBatch sample_counterfactuals(const data::Dataset &ds, double delta, int count,
                                           const ActionSpec &bounds, Rng &rng) {
  if (!(delta >= 0.0) || !std::isfinite(delta)) {
    throw InvalidInput("counterfactual radius must be finite and >= 0, got " +
                       std::to_string(delta));
  }
  if (count < 0) {
    throw InvalidInput("counterfactual count must be >= 0");
  }
  if (bounds.dim() != ds.action_dim()) {
    throw InvalidInput("action bounds dimension does not match dataset action dimension");
  }
  const int dim = ds.action_dim();
  const bool singleton = delta == 0.0 || count == 0;
  const int columns = singleton ? 1 : 1 + count;

  CounterfactualBatch batch;
  batch.delta = delta;
  batch.samples_per_pair = singleton ? 0 : count;
  batch.states.resize(ds.state_dim(), static_cast<Eigen::Index>(ds.size()));
  batch.sets.reserve(ds.size());

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double inv_dim = 1.0 / static_cast<double>(dim);

  for (std::size_t j = 0; j < ds.size(); ++j) {
    const auto &pair = ds[j];
    if (!bounds.contains(pair.a, 1e-12)) {
      throw InvalidInput("pair " + std::to_string(j) + ": demonstrated action outside bounds");
    }
    batch.states.col(static_cast<Eigen::Index>(j)) = pair.s;
    Matrix set(dim, columns);
    set.col(0) = pair.a;
    for (int k = 1; k < columns; ++k) {
      Vector direction(dim);
      double norm = 0.0;
      do {
        for (int i = 0; i < dim; ++i) {
          direction[i] = normal(rng);
        }
        norm = direction.norm();
      } while (norm == 0.0);
      const double radius = delta * std::pow(uniform(rng), inv_dim);
      set.col(k) = bounds.clip(pair.a + (radius / norm) * direction);
    }
    batch.sets.push_back(std::move(set));
  }
  return batch;
}

double log_sum_exp(const Vector &logits) {
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum());
}

Vector softmax(const Vector &logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

Vector restricted_classifier(const GaussianPolicy &policy, const Vector &s, const Matrix &cset) {
  if (cset.cols() == 0) {
    throw InvalidInput("restricted_classifier: empty counterfactual set");
  }
  if (cset.rows() != policy.action_dim()) {
    throw InvalidInput("restricted_classifier: action width mismatch");
  }
  const auto out = policy.evaluate(s);
  Vector logp(cset.cols());
  for (Eigen::Index k = 0; k < cset.cols(); ++k) {
    logp[k] = policy::gaussian_log_density(out.mean, out.log_std, cset.col(k));
  }
  return softmax(logp);
}

LossResult bc_loss(const GaussianPolicy &policy, const PairBatch &batch) {
  require_non_empty(batch.size(), "bc_loss");
  const auto heads = policy::forward_heads(policy, batch.states);
  const Eigen::Index n = batch.states.cols();
  const double scale = 1.0 / static_cast<double>(n);
  Matrix d_mean = Matrix::Zero(policy.action_dim(), n);
  Matrix d_log_std = Matrix::Zero(policy.action_dim(), n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double logp =
        policy::gaussian_log_density(heads.mean.col(j), heads.log_std.col(j), batch.actions.col(j));
    total += -logp;
    policy::accumulate_log_density_grad(heads.mean.col(j), heads.std.col(j), batch.actions.col(j),
                                        -1.0 * scale, d_mean.col(j), d_log_std.col(j));
  }
  LossResult result;
  result.report.loss = total * scale;
  result.grads = policy::backward_heads(policy, heads, d_mean, d_log_std);
  return result;
}

LossResult counter_bc_loss(const GaussianPolicy &policy, const CounterfactualBatch &batch,
                           bool detach_classifier) {
  require_non_empty(batch.size(), "counter_bc_loss");
  if (batch.states.cols() != static_cast<Eigen::Index>(batch.sets.size())) {
    throw InvalidInput("counter_bc_loss: states and sets differ in count");
  }
  const auto heads = policy::forward_heads(policy, batch.states);
  const Eigen::Index n = batch.states.cols();
  const double scale = 1.0 / static_cast<double>(n);
  Matrix d_mean = Matrix::Zero(policy.action_dim(), n);
  Matrix d_log_std = Matrix::Zero(policy.action_dim(), n);
  double total = 0.0;
  double total_entropy = 0.0;
  double total_kl = 0.0;

  for (Eigen::Index j = 0; j < n; ++j) {
    const Matrix &set = batch.sets[static_cast<std::size_t>(j)];
    if (set.cols() == 0 || set.rows() != policy.action_dim()) {
      throw InvalidInput("counter_bc_loss: malformed counterfactual set at pair " +
                         std::to_string(j));
    }
    Vector logp(set.cols());
    for (Eigen::Index k = 0; k < set.cols(); ++k) {
      logp[k] = policy::gaussian_log_density(heads.mean.col(j), heads.log_std.col(j), set.col(k));
    }
    const Vector log_restricted = logp.array() - log_sum_exp(logp);
    const Vector restricted = log_restricted.array().exp().matrix();

    const double pair_loss = -restricted.dot(logp);
    double entropy = 0.0;
    double kl = 0.0;
    for (Eigen::Index k = 0; k < set.cols(); ++k) {
      entropy -= restricted[k] * log_restricted[k];
      kl += restricted[k] * (log_restricted[k] - logp[k]);
    }
    total += pair_loss;
    total_entropy += entropy;
    total_kl += kl;

    // d(pair_loss)/d(logp_k) = -p_k (1 + logp_k - sum_i p_i logp_i); the second
    // term is the path through the softmax.
    const double mean_logp = -pair_loss;
    for (Eigen::Index k = 0; k < set.cols(); ++k) {
      const double coeff = detach_classifier
                               ? -restricted[k]
                               : -restricted[k] * (1.0 + (logp[k] - mean_logp));
      if (coeff == 0.0) {
        continue;
      }
      policy::accumulate_log_density_grad(heads.mean.col(j), heads.std.col(j), set.col(k),
                                          coeff * scale, d_mean.col(j), d_log_std.col(j));
    }
  }
  LossResult result;
  result.report.loss = total * scale;
  result.report.entropy = total_entropy * scale;
  result.report.kl = total_kl * scale;
  result.grads = policy::backward_heads(policy, heads, d_mean, d_log_std);
  return result;
}

LossResult weighted_nll_loss(const GaussianPolicy &policy, const PairBatch &batch,
                             const Vector &weights) {
  require_non_empty(batch.size(), "weighted_nll_loss");
  if (weights.size() != batch.states.cols()) {
    throw InvalidInput("weighted_nll_loss: one weight per pair required");
  }
  const auto heads = policy::forward_heads(policy, batch.states);
  const Eigen::Index n = batch.states.cols();
  const double scale = 1.0 / static_cast<double>(n);
  Matrix d_mean = Matrix::Zero(policy.action_dim(), n);
  Matrix d_log_std = Matrix::Zero(policy.action_dim(), n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (weights[j] == 0.0) {
      continue;
    }
    const double logp =
        policy::gaussian_log_density(heads.mean.col(j), heads.log_std.col(j), batch.actions.col(j));
    total += -weights[j] * logp;
    policy::accumulate_log_density_grad(heads.mean.col(j), heads.std.col(j), batch.actions.col(j),
                                        -weights[j] * scale, d_mean.col(j), d_log_std.col(j));
  }
  LossResult result;
  result.report.loss = total * scale;
  result.grads = policy::backward_heads(policy, heads, d_mean, d_log_std);
  return result;
}

Vector sasaki_weights(const GaussianPolicy &prev_policy, const PairBatch &batch) {
  require_non_empty(batch.size(), "sasaki_weights");
  const auto heads = policy::forward_heads(prev_policy, batch.states);
  const Eigen::Index n = batch.states.cols();
  Vector log_density(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    log_density[j] =
        policy::gaussian_log_density(heads.mean.col(j), heads.log_std.col(j), batch.actions.col(j));
  }
  const double log_mean = log_sum_exp(log_density) - std::log(static_cast<double>(n));
  return (log_density.array() - log_mean).exp().matrix();
}

LossResult sasaki_loss(const GaussianPolicy &policy, const GaussianPolicy &prev_policy,
                       const PairBatch &batch) {
  return weighted_nll_loss(policy, batch, sasaki_weights(prev_policy, batch));
}

nn::DenseNetwork make_expertise_network(int state_dim, int hidden, Rng &rng) {
  return nn::DenseNetwork::glorot({state_dim, hidden, hidden, 1}, rng);
}

Vector expertise_levels(const nn::DenseNetwork &expertise, const GaussianPolicy &policy,
                        const Matrix &states) {
  if (expertise.output_width() != 1) {
    throw InvalidInput("expertise network must have a single output");
  }
  const Matrix logits =
      nn::forward_batch(expertise, policy.normalizer().apply_columns(states));
  Vector rho(logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    rho[j] = sigmoid(logits(0, j));
  }
  return rho;
}

IleedResult ileed_loss(const GaussianPolicy &policy, const nn::DenseNetwork &expertise,
                       const PairBatch &batch, double lambda_reg) {
  require_non_empty(batch.size(), "ileed_loss");
  if (expertise.output_width() != 1 || expertise.input_width() != policy.state_dim()) {
    throw InvalidInput("expertise network must map the state to a single output");
  }
  const auto heads = policy::forward_heads(policy, batch.states);
  nn::ForwardCache expertise_cache;
  const Matrix logits = nn::forward_batch(
      expertise, policy.normalizer().apply_columns(batch.states), &expertise_cache);

  const Eigen::Index n = batch.states.cols();
  const double scale = 1.0 / static_cast<double>(n);
  Matrix d_mean = Matrix::Zero(policy.action_dim(), n);
  Matrix d_log_std = Matrix::Zero(policy.action_dim(), n);
  Matrix d_logit(1, n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double rho = sigmoid(logits(0, j));
    const double logp =
        policy::gaussian_log_density(heads.mean.col(j), heads.log_std.col(j), batch.actions.col(j));
    total += -rho * logp + lambda_reg * (1.0 - rho) * (1.0 - rho);
    policy::accumulate_log_density_grad(heads.mean.col(j), heads.std.col(j), batch.actions.col(j),
                                        -rho * scale, d_mean.col(j), d_log_std.col(j));
    const double d_rho = (-logp - 2.0 * lambda_reg * (1.0 - rho)) * scale;
    d_logit(0, j) = d_rho * rho * (1.0 - rho);
  }
  IleedResult result;
  result.report.loss = total * scale;
  result.policy_grads = policy::backward_heads(policy, heads, d_mean, d_log_std);
  result.expertise_grads = nn::backward_batch(expertise, expertise_cache, d_logit);
  return result;
}

} // namespace cbc::losses
