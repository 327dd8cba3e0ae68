#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cbc/demonstrators.hpp"
#include "cbc/envs.hpp"
#include "cbc/trainer.hpp"

namespace cbc::harness {

enum class SweepVariable { Pairs, Sigma, Delta };

SweepVariable parse_sweep_variable(std::string_view name);
std::string to_string(SweepVariable variable);

struct AlgorithmSpec {
  std::string label;
  /// Base training parameters merged with this algorithm's overrides.
  train::TrainConfig train;
  /// Counter-BC radius follows the demonstrator's noise scale (delta = sigma).
  bool delta_tracks_sigma = false;
};

struct ExperimentConfig {
  std::string env;
  demo::NoiseModel noise;
  std::size_t pairs = 400;
  /// When set, cells subsample this file instead of generating demonstrations.
  std::optional<std::filesystem::path> dataset_path;
  std::vector<AlgorithmSpec> algorithms;
  SweepVariable variable = SweepVariable::Sigma;
  std::vector<double> values;
  int seeds = 10;
  std::uint64_t base_seed = 0;
  envs::EvaluationConfig evaluation;
  /// 0 means one worker per hardware thread.
  int workers = 1;
  std::filesystem::path output_dir = "sweep_out";
  bool save_checkpoints = true;

  void validate() const;
};

/// Parses the declarative sweep document (docs/sweep_config.schema.json).
/// Relative dataset/output paths resolve against base_dir.
ExperimentConfig parse_experiment_config(const nlohmann::json &doc,
                                         const std::filesystem::path &base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path &path);

struct CellCoordinates {
  std::size_t algorithm = 0;
  std::size_t value = 0;
  int seed = 0;
};

/// Seed of replicate `seed_index`. It is shared by every algorithm and every
/// grid value, so the demonstration noise, network initialization and
/// evaluation resets are common random numbers across the whole row.
std::uint64_t cell_seed(const ExperimentConfig &cfg, int seed_index);

/// The demonstrations a cell trains on. Independent of the algorithm.
data::Dataset cell_dataset(const ExperimentConfig &cfg, std::size_t value_index, int seed_index);

/// The training config a cell uses.
train::TrainConfig cell_train_config(const ExperimentConfig &cfg, const CellCoordinates &cell);

struct RunResult {
  std::string algorithm;
  SweepVariable variable = SweepVariable::Sigma;
  double value = 0.0;
  int seed = 0;
  std::size_t algorithm_index = 0;
  std::size_t value_index = 0;
  std::string status = "ok"; // ok | diverged | error
  std::string error;
  double performance = 0.0;
  double final_loss = 0.0;
  std::string checkpoint;
  double wall_time_s = 0.0;

  bool ok() const { return status == "ok"; }
};

/// Trains and evaluates one cell. Training divergence and other cell-level
/// failures are captured in the result.
RunResult run_cell(const ExperimentConfig &cfg, const CellCoordinates &cell);

using ProgressFn = std::function<void(const RunResult &, std::size_t done, std::size_t total)>;

/// Runs every (algorithm x value x seed) cell on a bounded worker pool.
/// Rows are appended to <output_dir>/results.stream.csv as they finish; the
/// returned table (and <output_dir>/results.csv) is in cell order, so it does
/// not depend on scheduling.
std::vector<RunResult> run_sweep(const ExperimentConfig &cfg, const ProgressFn &progress = {});

std::string results_csv_header();
std::string results_csv_row(const RunResult &row);
void write_results_csv(const std::vector<RunResult> &rows, const std::filesystem::path &path);
std::vector<RunResult> read_results_csv(const std::filesystem::path &path);

struct SummaryRow {
  std::string algorithm;
  SweepVariable variable = SweepVariable::Sigma;
  double value = 0.0;
  int n = 0;
  int errors = 0;
  double mean = 0.0;
  /// Sample standard deviation over sqrt(n); reported as 0 when n == 1.
  double standard_error = 0.0;
  bool standard_error_defined = false;
};

/// Per-(algorithm, value) aggregation of the successful rows, in first
/// appearance order.
std::vector<SummaryRow> summarize(const std::vector<RunResult> &rows);
void write_summary_csv(const std::vector<SummaryRow> &rows, const std::filesystem::path &path);
void print_summary_table(const std::vector<SummaryRow> &rows, std::ostream &out);

/// SVG line chart of mean +- standard error against the sweep value, one
/// series per algorithm.
std::string render_svg(const std::vector<SummaryRow> &rows, const std::string &title = {});

} // namespace cbc::harness
