#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cbc/action_spec.hpp"
#include "cbc/dataset.hpp"
#include "cbc/nn.hpp"
#include "cbc/policy.hpp"
#include "cbc/rng.hpp"

namespace cbc::losses {

using nn::Matrix;
using nn::Vector;
using policy::GaussianPolicy;

/// States and actions of a minibatch, one column per pair.
struct PairBatch {
  Matrix states;
  Matrix actions;

  std::size_t size() const { return static_cast<std::size_t>(states.cols()); }
};

PairBatch make_pair_batch(std::span<const data::StateActionPair> pairs);
PairBatch make_pair_batch(const data::Dataset &ds, std::span<const std::size_t> indices);

/// Per-pair counterfactual action sets C(s, a). Column 0 of sets[j] is the
/// demonstrated action; the remaining columns are draws inside the radius.
struct CounterfactualBatch {
  Matrix states;
  std::vector<Matrix> sets;
  double delta = 0.0;
  int samples_per_pair = 0;

  std::size_t size() const { return sets.size(); }
  CounterfactualBatch subset(std::span<const std::size_t> indices) const;
};

/// For every pair, emits {a} plus `count` draws uniform in the L2 ball of
/// radius delta around a, each clipped to the action bounds. delta == 0 or
/// count == 0 yields the singleton {a}. Demonstrated actions must lie within
/// the bounds (clipping then never leaves the ball).
CounterfactualBatch sample_counterfactuals(const data::Dataset &ds, double delta, int count,
                                           const ActionSpec &bounds, Rng &rng);

/// Numerically stable softmax.
Vector softmax(const Vector &logits);
double log_sum_exp(const Vector &logits);

/// Restricted policy over a candidate set: softmax of log pi(a'|s) over the
/// columns of cset. Sums to one.
Vector restricted_classifier(const GaussianPolicy &policy, const Vector &s, const Matrix &cset);

struct LossReport {
  double loss = 0.0;
  /// Counter-BC only: batch means of H(restricted policy) and KL(restricted || policy).
  std::optional<double> entropy;
  std::optional<double> kl;
};

struct LossResult {
  LossReport report;
  nn::Gradients grads;
};

/// Mean negative log-likelihood of the demonstrated actions.
LossResult bc_loss(const GaussianPolicy &policy, const PairBatch &batch);

/// Mean over pairs of -softmax(l) . l where l = [log pi(a'|s)]_{a' in C(s,a)}.
/// With detach_classifier the softmax weights are treated as constants.
LossResult counter_bc_loss(const GaussianPolicy &policy, const CounterfactualBatch &batch,
                           bool detach_classifier = false);

/// Mean of -w_j log pi(a_j|s_j) with constant weights w (not renormalized).
LossResult weighted_nll_loss(const GaussianPolicy &policy, const PairBatch &batch,
                             const Vector &weights);

/// Densities of the frozen previous policy at the batch pairs, rescaled to
/// mean 1 over the batch (computed in log space).
Vector sasaki_weights(const GaussianPolicy &prev_policy, const PairBatch &batch);

/// weighted_nll_loss with sasaki_weights(prev_policy, batch).
LossResult sasaki_loss(const GaussianPolicy &policy, const GaussianPolicy &prev_policy,
                       const PairBatch &batch);

/// State-only expertise network rho(s) = sigmoid(net(normalized s)), output width 1.
nn::DenseNetwork make_expertise_network(int state_dim, int hidden, Rng &rng);

/// rho for each column of states, using the policy's state normalizer.
Vector expertise_levels(const nn::DenseNetwork &expertise, const GaussianPolicy &policy,
                        const Matrix &states);

struct IleedResult {
  LossReport report;
  nn::Gradients policy_grads;
  nn::Gradients expertise_grads;
};

/// Mean of -rho(s) log pi(a|s) + lambda_reg (1 - rho(s))^2; gradients for both
/// networks.
IleedResult ileed_loss(const GaussianPolicy &policy, const nn::DenseNetwork &expertise,
                       const PairBatch &batch, double lambda_reg);

} // namespace cbc::losses
