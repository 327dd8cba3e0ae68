#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cbc/rng.hpp"

namespace cbc::data {

struct StateActionPair {
  Eigen::VectorXd s;
  Eigen::VectorXd a;

  bool operator==(const StateActionPair &other) const { return s == other.s && a == other.a; }
};

/// A demonstration corpus: ordered (state, action) pairs of fixed dimensions
/// plus free-form provenance metadata (env id, demonstrator, noise, ...).
/// Learners never read the provenance.
class Dataset {
public:
  Dataset(int state_dim, int action_dim, nlohmann::json provenance = nlohmann::json::object());

  /// Appends a pair; throws InvalidInput on dimension mismatch or non-finite entries.
  void add(StateActionPair pair);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }

  std::span<const StateActionPair> pairs() const { return pairs_; }
  const StateActionPair &operator[](std::size_t i) const { return pairs_[i]; }

  const nlohmann::json &provenance() const { return provenance_; }
  nlohmann::json &provenance() { return provenance_; }

private:
  int state_dim_;
  int action_dim_;
  nlohmann::json provenance_;
  std::vector<StateActionPair> pairs_;
};

constexpr int kJsonlFormatVersion = 1;

/// Line 1: {"format_version","state_dim","action_dim","provenance"}; then one
/// {"s":[...],"a":[...]} object per line, numbers printed with 17 significant
/// digits so the round trip is exact.
void save_jsonl(const Dataset &ds, const std::filesystem::path &path);

/// Throws ParseError (malformed line) or SchemaError (missing header, wrong
/// dims), both carrying the 1-based line number.
Dataset load_jsonl(const std::filesystem::path &path);

/// k pairs drawn uniformly without replacement, in draw order.
Dataset subsample(const Dataset &ds, std::size_t k, Rng &rng);

struct NormalizationStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static constexpr double kStdFloor = 1e-6;

  static NormalizationStats identity(int dim);

  Eigen::VectorXd apply(const Eigen::VectorXd &s) const;
  /// Column-wise z-scoring of a (dim x batch) matrix.
  Eigen::MatrixXd apply_columns(const Eigen::MatrixXd &states) const;
};

/// Per-dimension state mean and population standard deviation (floored).
/// Actions are deliberately left alone. Requires at least two pairs.
NormalizationStats fit_normalizer(const Dataset &ds);

} // namespace cbc::data
