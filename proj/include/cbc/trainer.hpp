#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cbc/action_spec.hpp"
#include "cbc/dataset.hpp"
#include "cbc/nn.hpp"
#include "cbc/policy.hpp"

namespace cbc::train {

enum class LossKind { BC, CounterBC, Sasaki, Ileed };

LossKind parse_loss_kind(std::string_view name);
std::string to_string(LossKind kind);

struct TrainConfig {
  LossKind loss = LossKind::BC;
  /// Env whose action bounds and dims the dataset must match; empty means
  /// unit-box actions of the dataset's width.
  std::string env;
  int epochs = 500;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int hidden = 256;
  bool normalize_states = true;

  // Counter-BC
  double delta = 0.5;
  int counterfactuals = 16;
  bool detach_classifier = false;
  bool resample_counterfactuals = false;

  // ILEED
  double lambda_reg = 0.1;

  // Sasaki
  int sync_epochs = 10;

  /// Checkpoint callback period in epochs; 0 disables intermediate checkpoints.
  int eval_cadence = 0;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> entropy;
  std::optional<double> kl;
  double loss_ema = 0.0;
};

struct TrainResult {
  policy::GaussianPolicy policy;
  std::vector<EpochLog> history;
  /// ILEED's state-expertise network.
  std::optional<nn::DenseNetwork> expertise;
};

using CheckpointFn = std::function<void(int epoch, const policy::GaussianPolicy &)>;

/// Minibatch Adam training of a fresh Gaussian policy under the configured
/// loss. Every random choice derives from cfg.seed via make_stream, so equal
/// (dataset, config) pairs give bit-identical policies. Throws InvalidInput on
/// dimension mismatch and TrainingDiverged on a non-finite loss or a loss
/// blow-up.
TrainResult train(const data::Dataset &ds, const TrainConfig &cfg,
                  const CheckpointFn &on_checkpoint = {});

/// epoch,loss,entropy,kl,loss_ema (entropy and kl empty unless Counter-BC).
void write_loss_csv(const std::vector<EpochLog> &history, const std::filesystem::path &path);

} // namespace cbc::train
