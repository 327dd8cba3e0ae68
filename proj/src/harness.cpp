#include "cbc/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <span>
#include <sstream>
#include <thread>

#include "cbc/error.hpp"
#include "cbc/rng.hpp"

namespace cbc::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void check_keys(const json &obj, std::span<const std::string_view> allowed,
                const std::string &where) {
  if (!obj.is_object()) {
    throw InvalidInput(where + " must be a JSON object");
  }
  for (const auto &[key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw InvalidInput("unknown key '" + key + "' in " + where);
    }
  }
}

void check_keys(const json &obj, std::initializer_list<std::string_view> allowed,
                const std::string &where) {
  check_keys(obj, std::span<const std::string_view>(allowed.begin(), allowed.size()), where);
}

// Keys shared by the top-level "train" block and per-algorithm overrides.
constexpr std::array<std::string_view, 11> kTrainKeys = {
    "epochs",          "batch_size",        "learning_rate",
    "hidden",          "normalize_states",  "delta",
    "counterfactuals", "detach_classifier", "resample_counterfactuals",
    "lambda_reg",      "sync_epochs"};

template <typename T> void read_if(const json &obj, const char *key, T &out) {
  if (auto it = obj.find(key); it != obj.end()) {
    out = it->get<T>();
  }
}

void apply_train_overrides(const json &obj, train::TrainConfig &cfg) {
  read_if(obj, "epochs", cfg.epochs);
  read_if(obj, "batch_size", cfg.batch_size);
  read_if(obj, "learning_rate", cfg.learning_rate);
  read_if(obj, "hidden", cfg.hidden);
  read_if(obj, "normalize_states", cfg.normalize_states);
  read_if(obj, "counterfactuals", cfg.counterfactuals);
  read_if(obj, "detach_classifier", cfg.detach_classifier);
  read_if(obj, "resample_counterfactuals", cfg.resample_counterfactuals);
  read_if(obj, "lambda_reg", cfg.lambda_reg);
  read_if(obj, "sync_epochs", cfg.sync_epochs);
  if (auto it = obj.find("delta"); it != obj.end() && it->is_number()) {
    cfg.delta = it->get<double>();
  }
}

std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) {
    return s;
  }
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') {
      out += '"';
    }
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string checkpoint_name(const ExperimentConfig &cfg, const CellCoordinates &cell) {
  std::string label = cfg.algorithms[cell.algorithm].label;
  std::replace_if(
      label.begin(), label.end(), [](char c) { return !std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_'; },
      '_');
  return label + "__" + to_string(cfg.variable) + "=" + fmt_short(cfg.values[cell.value]) +
         "__seed" + std::to_string(cell.seed) + ".json";
}

} // namespace

SweepVariable parse_sweep_variable(std::string_view name) {
  if (name == "pairs") {
    return SweepVariable::Pairs;
  }
  if (name == "sigma") {
    return SweepVariable::Sigma;
  }
  if (name == "delta") {
    return SweepVariable::Delta;
  }
  throw InvalidInput("unknown sweep variable '" + std::string(name) +
                     "' (expected pairs, sigma or delta)");
}

std::string to_string(SweepVariable variable) {
  switch (variable) {
  case SweepVariable::Pairs:
    return "pairs";
  case SweepVariable::Sigma:
    return "sigma";
  case SweepVariable::Delta:
    return "delta";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  auto env_ids = envs::env_ids();
  if (std::find(env_ids.begin(), env_ids.end(), env) == env_ids.end()) {
    throw InvalidInput("unknown env '" + env + "'");
  }
  noise.validate();
  if (algorithms.empty()) {
    throw InvalidInput("sweep needs at least one algorithm");
  }
  for (const auto &algo : algorithms) {
    if (algo.label.empty()) {
      throw InvalidInput("algorithm labels must be non-empty");
    }
    algo.train.validate();
    if (algo.delta_tracks_sigma && variable == SweepVariable::Delta) {
      throw InvalidInput("algorithm '" + algo.label +
                         "' ties delta to sigma, which conflicts with a delta sweep");
    }
  }
  for (std::size_t i = 0; i < algorithms.size(); ++i) {
    for (std::size_t j = i + 1; j < algorithms.size(); ++j) {
      if (algorithms[i].label == algorithms[j].label) {
        throw InvalidInput("duplicate algorithm label '" + algorithms[i].label + "'");
      }
    }
  }
  if (values.empty()) {
    throw InvalidInput("sweep grid must be non-empty");
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw InvalidInput("sweep values must be finite");
    }
    switch (variable) {
    case SweepVariable::Pairs:
      if (v < 1.0 || v != std::floor(v)) {
        throw InvalidInput("pair counts must be positive integers");
      }
      break;
    case SweepVariable::Sigma: {
      demo::NoiseModel probe = noise;
      probe.sigma = v;
      probe.validate();
      break;
    }
    case SweepVariable::Delta:
      if (v < 0.0) {
        throw InvalidInput("delta values must be >= 0");
      }
      break;
    }
  }
  if (seeds < 1) {
    throw InvalidInput("seeds must be >= 1");
  }
  if (pairs < 1) {
    throw InvalidInput("pairs must be >= 1");
  }
  if (dataset_path && variable == SweepVariable::Sigma) {
    throw InvalidInput("a sigma sweep needs a synthetic demonstrator, not a dataset file");
  }
  if (evaluation.rollouts < 1) {
    throw InvalidInput("evaluation rollouts must be >= 1");
  }
  if (evaluation.horizon < 0) {
    throw InvalidInput("evaluation horizon must be >= 0");
  }
  if (workers < 0) {
    throw InvalidInput("workers must be >= 0");
  }
}

ExperimentConfig parse_experiment_config(const json &doc, const fs::path &base_dir) {
  check_keys(doc,
             {"env", "demonstrator", "dataset", "pairs", "train", "algorithms", "sweep", "seeds",
              "base_seed", "evaluation", "workers", "output_dir", "save_checkpoints"},
             "sweep config");
  ExperimentConfig cfg;
  try {
    cfg.env = doc.at("env").get<std::string>();
    read_if(doc, "pairs", cfg.pairs);
    if (auto it = doc.find("demonstrator"); it != doc.end()) {
      check_keys(*it, {"noise", "sigma"}, "demonstrator");
      cfg.noise.kind = demo::parse_noise_kind(it->value("noise", std::string("uniform")));
      cfg.noise.sigma = it->value("sigma", 0.0);
    }
    if (auto it = doc.find("dataset"); it != doc.end()) {
      fs::path p = it->get<std::string>();
      cfg.dataset_path = p.is_relative() ? base_dir / p : p;
    }

    train::TrainConfig base;
    base.env = cfg.env;
    if (auto it = doc.find("train"); it != doc.end()) {
      check_keys(*it, kTrainKeys, "train");
      if (auto d = it->find("delta"); d != it->end() && !d->is_number()) {
        throw InvalidInput("train.delta must be a number; use \"sigma\" per algorithm");
      }
      apply_train_overrides(*it, base);
    }

    for (const auto &entry : doc.at("algorithms")) {
      std::vector<std::string_view> allowed(kTrainKeys.begin(), kTrainKeys.end());
      allowed.push_back("label");
      allowed.push_back("loss");
      for (const auto &[key, _] : entry.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
          throw InvalidInput("unknown key '" + key + "' in algorithm entry");
        }
      }
      AlgorithmSpec algo;
      algo.train = base;
      algo.train.loss = train::parse_loss_kind(entry.at("loss").get<std::string>());
      algo.label = entry.value("label", train::to_string(algo.train.loss));
      apply_train_overrides(entry, algo.train);
      if (auto it = entry.find("delta"); it != entry.end() && it->is_string()) {
        if (it->get<std::string>() != "sigma") {
          throw InvalidInput("algorithm delta must be a number or \"sigma\"");
        }
        algo.delta_tracks_sigma = true;
      }
      cfg.algorithms.push_back(std::move(algo));
    }

    const auto &sweep = doc.at("sweep");
    check_keys(sweep, {"variable", "values"}, "sweep");
    cfg.variable = parse_sweep_variable(sweep.at("variable").get<std::string>());
    cfg.values = sweep.at("values").get<std::vector<double>>();

    read_if(doc, "seeds", cfg.seeds);
    read_if(doc, "base_seed", cfg.base_seed);
    if (auto it = doc.find("evaluation"); it != doc.end()) {
      check_keys(*it, {"rollouts", "horizon", "deterministic"}, "evaluation");
      read_if(*it, "rollouts", cfg.evaluation.rollouts);
      read_if(*it, "horizon", cfg.evaluation.horizon);
      read_if(*it, "deterministic", cfg.evaluation.deterministic);
    }
    read_if(doc, "workers", cfg.workers);
    if (auto it = doc.find("output_dir"); it != doc.end()) {
      fs::path p = it->get<std::string>();
      cfg.output_dir = p.is_relative() ? base_dir / p : p;
    } else {
      cfg.output_dir = base_dir / "sweep_out";
    }
    read_if(doc, "save_checkpoints", cfg.save_checkpoints);
  } catch (const json::exception &e) {
    throw InvalidInput(std::string("malformed sweep config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open sweep config '" + path.string() + "'");
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error &e) {
    throw InvalidInput("sweep config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_experiment_config(doc, path.parent_path());
}

std::uint64_t cell_seed(const ExperimentConfig &cfg, int seed_index) {
  return mix_seed(cfg.base_seed, static_cast<std::uint64_t>(seed_index));
}

data::Dataset cell_dataset(const ExperimentConfig &cfg, std::size_t value_index, int seed_index) {
  const std::uint64_t seed = cell_seed(cfg, seed_index);
  const double value = cfg.values.at(value_index);
  const std::size_t pairs =
      cfg.variable == SweepVariable::Pairs ? static_cast<std::size_t>(value) : cfg.pairs;
  if (cfg.dataset_path) {
    const auto source = data::load_jsonl(*cfg.dataset_path);
    Rng rng = make_stream(seed, Stream::Subsample);
    return data::subsample(source, pairs, rng);
  }
  demo::NoiseModel noise = cfg.noise;
  if (cfg.variable == SweepVariable::Sigma) {
    noise.sigma = value;
  }
  Rng rng = make_stream(seed, Stream::Demonstrations);
  return demo::generate_dataset(cfg.env, noise, pairs, rng);
}

train::TrainConfig cell_train_config(const ExperimentConfig &cfg, const CellCoordinates &cell) {
  const auto &algo = cfg.algorithms.at(cell.algorithm);
  train::TrainConfig tc = algo.train;
  tc.env = cfg.env;
  tc.seed = cell_seed(cfg, cell.seed);
  const double value = cfg.values.at(cell.value);
  if (cfg.variable == SweepVariable::Delta) {
    tc.delta = value;
  }
  if (algo.delta_tracks_sigma) {
    tc.delta = cfg.variable == SweepVariable::Sigma ? value : cfg.noise.sigma;
  }
  return tc;
}

RunResult run_cell(const ExperimentConfig &cfg, const CellCoordinates &cell) {
  RunResult row;
  row.algorithm = cfg.algorithms.at(cell.algorithm).label;
  row.variable = cfg.variable;
  row.value = cfg.values.at(cell.value);
  row.seed = cell.seed;
  row.algorithm_index = cell.algorithm;
  row.value_index = cell.value;

  const auto started = std::chrono::steady_clock::now();
  try {
    const auto ds = cell_dataset(cfg, cell.value, cell.seed);
    const auto tc = cell_train_config(cfg, cell);
    auto trained = train::train(ds, tc);
    row.final_loss = trained.history.back().loss;

    envs::EvaluationConfig eval = cfg.evaluation;
    eval.seed = tc.seed;
    row.performance = envs::evaluate_policy(cfg.env, trained.policy, eval);
    if (!std::isfinite(row.performance)) {
      throw Error("evaluation produced a non-finite performance");
    }
    if (cfg.save_checkpoints) {
      const fs::path dir = cfg.output_dir / "checkpoints";
      fs::create_directories(dir);
      const fs::path path = dir / checkpoint_name(cfg, cell);
      policy::save_policy(trained.policy, path);
      row.checkpoint = path.string();
    }
  } catch (const TrainingDiverged &e) {
    row.status = "diverged";
    row.error = e.what();
    row.performance = std::nan("");
  } catch (const std::exception &e) {
    row.status = "error";
    row.error = e.what();
    row.performance = std::nan("");
  }
  row.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return row;
}

std::vector<RunResult> run_sweep(const ExperimentConfig &cfg, const ProgressFn &progress) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);

  std::vector<CellCoordinates> cells;
  for (std::size_t a = 0; a < cfg.algorithms.size(); ++a) {
    for (std::size_t v = 0; v < cfg.values.size(); ++v) {
      for (int s = 0; s < cfg.seeds; ++s) {
        cells.push_back({a, v, s});
      }
    }
  }
  std::vector<RunResult> results(cells.size());

  std::ofstream stream(cfg.output_dir / "results.stream.csv", std::ios::binary | std::ios::trunc);
  if (!stream) {
    throw Error("cannot write to output dir '" + cfg.output_dir.string() + "'");
  }
  stream << results_csv_header() << '\n' << std::flush;

  std::mutex sink;
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      RunResult row = run_cell(cfg, cells[i]);
      std::lock_guard lock(sink);
      stream << results_csv_row(row) << '\n' << std::flush;
      results[i] = std::move(row);
      ++done;
      if (progress) {
        progress(results[i], done, cells.size());
      }
    }
  };

  std::size_t workers = cfg.workers > 0 ? static_cast<std::size_t>(cfg.workers)
                                        : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, cells.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back(worker);
    }
  }

  write_results_csv(results, cfg.output_dir / "results.csv");
  const auto summary = summarize(results);
  write_summary_csv(summary, cfg.output_dir / "summary.csv");
  std::ofstream table(cfg.output_dir / "summary.txt", std::ios::binary | std::ios::trunc);
  print_summary_table(summary, table);
  return results;
}

std::string results_csv_header() {
  return "algorithm,variable,value,seed,status,performance,final_loss,checkpoint,error,wall_time_s";
}

std::string results_csv_row(const RunResult &row) {
  std::ostringstream out;
  out << csv_field(row.algorithm) << ',' << to_string(row.variable) << ','
      << fmt_double(row.value) << ',' << row.seed << ',' << row.status << ','
      << (row.ok() ? fmt_double(row.performance) : "") << ','
      << (row.ok() ? fmt_double(row.final_loss) : "") << ',' << csv_field(row.checkpoint) << ','
      << csv_field(row.error) << ',' << fmt_double(row.wall_time_s);
  return out.str();
}

void write_results_csv(const std::vector<RunResult> &rows, const fs::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open '" + path.string() + "' for writing");
  }
  out << results_csv_header() << '\n';
  for (const auto &row : rows) {
    out << results_csv_row(row) << '\n';
  }
}

std::vector<RunResult> read_results_csv(const fs::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open '" + path.string() + "'");
  }
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != results_csv_header()) {
    throw SchemaError(1, "'" + path.string() + "' is not a results CSV");
  }
  std::vector<RunResult> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    // A quoted field may span lines; keep reading until the quotes balance.
    const std::size_t first_line = line_no;
    while (std::count(line.begin(), line.end(), '"') % 2 == 1) {
      std::string more;
      if (!std::getline(in, more)) {
        throw ParseError(first_line, "unterminated quoted field");
      }
      ++line_no;
      line += '\n';
      line += more;
    }
    auto f = split_csv_line(line);
    if (f.size() != 10) {
      throw ParseError(line_no, "expected 10 fields, found " + std::to_string(f.size()));
    }
    try {
      RunResult row;
      row.algorithm = f[0];
      row.variable = parse_sweep_variable(f[1]);
      row.value = std::stod(f[2]);
      row.seed = std::stoi(f[3]);
      row.status = f[4];
      row.performance = f[5].empty() ? std::nan("") : std::stod(f[5]);
      row.final_loss = f[6].empty() ? std::nan("") : std::stod(f[6]);
      row.checkpoint = f[7];
      row.error = f[8];
      row.wall_time_s = std::stod(f[9]);
      rows.push_back(std::move(row));
    } catch (const std::logic_error &e) {
      throw ParseError(line_no, std::string("bad field: ") + e.what());
    }
  }
  return rows;
}

std::vector<SummaryRow> summarize(const std::vector<RunResult> &rows) {
  std::vector<SummaryRow> out;
  std::vector<std::vector<double>> samples;
  for (const auto &row : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow &s) {
      return s.algorithm == row.algorithm && s.value == row.value;
    });
    if (it == out.end()) {
      SummaryRow s;
      s.algorithm = row.algorithm;
      s.variable = row.variable;
      s.value = row.value;
      out.push_back(s);
      samples.emplace_back();
      it = out.end() - 1;
    }
    const auto k = static_cast<std::size_t>(it - out.begin());
    if (row.ok()) {
      samples[k].push_back(row.performance);
    } else {
      ++it->errors;
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto &xs = samples[k];
    auto &s = out[k];
    s.n = static_cast<int>(xs.size());
    if (xs.empty()) {
      s.mean = std::nan("");
      continue;
    }
    double sum = 0.0;
    for (double x : xs) {
      sum += x;
    }
    s.mean = sum / static_cast<double>(xs.size());
    if (xs.size() >= 2) {
      double ss = 0.0;
      for (double x : xs) {
        ss += (x - s.mean) * (x - s.mean);
      }
      const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
      s.standard_error = sd / std::sqrt(static_cast<double>(xs.size()));
      s.standard_error_defined = true;
    }
  }
  return out;
}

void write_summary_csv(const std::vector<SummaryRow> &rows, const fs::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open '" + path.string() + "' for writing");
  }
  out << "algorithm,variable,value,n,errors,mean,standard_error,standard_error_defined\n";
  for (const auto &s : rows) {
    out << csv_field(s.algorithm) << ',' << to_string(s.variable) << ',' << fmt_double(s.value)
        << ',' << s.n << ',' << s.errors << ',' << (s.n > 0 ? fmt_double(s.mean) : "") << ','
        << fmt_double(s.standard_error) << ',' << (s.standard_error_defined ? 1 : 0) << '\n';
  }
}

void print_summary_table(const std::vector<SummaryRow> &rows, std::ostream &out) {
  std::size_t width = 9;
  for (const auto &s : rows) {
    width = std::max(width, s.algorithm.size());
  }
  const std::string variable = rows.empty() ? "value" : to_string(rows.front().variable);
  out << std::left << std::setw(static_cast<int>(width) + 2) << "algorithm" << std::setw(10)
      << variable << std::right << std::setw(5) << "n" << std::setw(8) << "errors"
      << std::setw(14) << "mean" << std::setw(12) << "se" << '\n';
  for (const auto &s : rows) {
    out << std::left << std::setw(static_cast<int>(width) + 2) << s.algorithm << std::setw(10)
        << fmt_short(s.value) << std::right << std::setw(5) << s.n << std::setw(8) << s.errors
        << std::setw(14) << std::fixed << std::setprecision(4) << s.mean << std::setw(12)
        << s.standard_error << (s.standard_error_defined ? "" : "  (n=1, se undefined)")
        << std::defaultfloat << '\n';
  }
}

} // namespace cbc::harness
