#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cbc/error.hpp"
#include "cbc/harness.hpp"

using namespace cbc;
using namespace cbc::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
  const auto dir = fs::temp_directory_path() / ("cbc_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json small_sweep(const fs::path &out) {
  return {
      {"env", "absval"},
      {"demonstrator", {{"noise", "uniform"}, {"sigma", 0.5}}},
      {"pairs", 40},
      {"train", {{"epochs", 15}, {"batch_size", 16}, {"hidden", 16}}},
      {"algorithms",
       {{{"label", "BC"}, {"loss", "bc"}},
        {{"label", "Counter-BC"}, {"loss", "counterbc"}, {"delta", 0.25}}}},
      {"sweep", {{"variable", "sigma"}, {"values", {0.0, 0.5}}}},
      {"seeds", 2},
      {"base_seed", 3},
      {"output_dir", out.string()},
  };
}

// Drops the trailing wall-time column.
std::vector<std::string> rows_without_time(const std::vector<RunResult> &rows) {
  std::vector<std::string> out;
  for (auto row : rows) {
    row.wall_time_s = 0.0;
    out.push_back(results_csv_row(row));
  }
  return out;
}

RunResult row_with(double perf, int seed) {
  RunResult r;
  r.algorithm = "BC";
  r.value = 0.5;
  r.seed = seed;
  r.performance = perf;
  return r;
}

} // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse_experiment_config(small_sweep("/tmp/x"));
  CHECK(cfg.env == "absval");
  CHECK(cfg.noise.sigma == 0.5);
  CHECK(cfg.pairs == 40);
  REQUIRE(cfg.algorithms.size() == 2);
  CHECK(cfg.algorithms[0].train.epochs == 15);
  CHECK(cfg.algorithms[1].train.loss == train::LossKind::CounterBC);
  CHECK(cfg.algorithms[1].train.delta == 0.25);
  CHECK(cfg.algorithms[1].train.hidden == 16);
  CHECK(cfg.variable == SweepVariable::Sigma);
  CHECK(cfg.values == std::vector<double>{0.0, 0.5});
  CHECK(cfg.seeds == 2);
}

TEST_CASE("delta may track sigma") {
  auto doc = small_sweep("/tmp/x");
  doc["algorithms"][1]["delta"] = "sigma";
  const auto cfg = parse_experiment_config(doc);
  CHECK(cfg.algorithms[1].delta_tracks_sigma);
  CHECK(cell_train_config(cfg, {1, 1, 0}).delta == 0.5);
  CHECK(cell_train_config(cfg, {1, 0, 0}).delta == 0.0);
}

TEST_CASE("config errors are reported") {
  auto bad = small_sweep("/tmp/x");
  bad["sweep"]["values"] = nlohmann::json::array();
  CHECK_THROWS_AS(parse_experiment_config(bad), InvalidInput);
  bad = small_sweep("/tmp/x");
  bad["seeds"] = 0;
  CHECK_THROWS_AS(parse_experiment_config(bad), InvalidInput);
  bad = small_sweep("/tmp/x");
  bad["colour"] = "blue";
  CHECK_THROWS_AS(parse_experiment_config(bad), InvalidInput);
  bad = small_sweep("/tmp/x");
  bad["algorithms"][0]["loss"] = "gail";
  CHECK_THROWS_AS(parse_experiment_config(bad), InvalidInput);
  bad = small_sweep("/tmp/x");
  bad["sweep"]["variable"] = "epochs";
  CHECK_THROWS_AS(parse_experiment_config(bad), InvalidInput);
  bad = small_sweep("/tmp/x");
  bad["train"]["delta"] = "sigma";
  CHECK_THROWS_AS(parse_experiment_config(bad), InvalidInput);
}

TEST_CASE("cells share data and seeds across algorithms") {
  const auto cfg = parse_experiment_config(small_sweep("/tmp/x"));
  CHECK(cell_seed(cfg, 0) != cell_seed(cfg, 1));
  const auto a = cell_dataset(cfg, 1, 0);
  const auto b = cell_dataset(cfg, 1, 0);
  REQUIRE(a.size() == 40);
  for (std::size_t j = 0; j < a.size(); ++j) {
    CHECK(a[j] == b[j]);
  }
  CHECK(cell_train_config(cfg, {0, 1, 1}).seed == cell_train_config(cfg, {1, 0, 1}).seed);
}

TEST_CASE("a single cell equals calling the trainer and evaluator directly") {
  const auto dir = scratch("single");
  auto doc = small_sweep(dir);
  doc["algorithms"] = {{{"label", "Counter-BC"}, {"loss", "counterbc"}, {"delta", 0.25}}};
  doc["sweep"]["values"] = {0.5};
  doc["seeds"] = 1;
  const auto cfg = parse_experiment_config(doc);
  const auto rows = run_sweep(cfg);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].ok());

  const std::uint64_t seed = mix_seed(3, 0);
  Rng demo_rng = make_stream(seed, Stream::Demonstrations);
  const auto ds = demo::generate_dataset("absval", {demo::NoiseKind::Uniform, 0.5}, 40, demo_rng);
  train::TrainConfig tc;
  tc.loss = train::LossKind::CounterBC;
  tc.env = "absval";
  tc.delta = 0.25;
  tc.epochs = 15;
  tc.batch_size = 16;
  tc.hidden = 16;
  tc.seed = seed;
  const auto trained = train::train(ds, tc);
  envs::EvaluationConfig ec;
  ec.seed = seed;
  CHECK(rows[0].performance == envs::evaluate_policy("absval", trained.policy, ec));
  CHECK(rows[0].final_loss == trained.history.back().loss);
  fs::remove_all(dir);
}

TEST_CASE("sweeps are deterministic, parallelism-independent and reloadable") {
  const auto dir_a = scratch("serial");
  const auto dir_b = scratch("parallel");
  auto doc = small_sweep(dir_a);
  doc["env"] = "cartpole";
  doc["pairs"] = 60;
  doc["evaluation"] = {{"rollouts", 3}};
  const auto serial_cfg = parse_experiment_config(doc);
  doc["output_dir"] = dir_b.string();
  doc["workers"] = 3;
  const auto parallel_cfg = parse_experiment_config(doc);

  const auto serial = run_sweep(serial_cfg);
  const auto parallel = run_sweep(parallel_cfg);
  REQUIRE(serial.size() == 8);
  auto strip_dir = [](std::vector<RunResult> rows) {
    for (auto &r : rows) {
      r.checkpoint = fs::path(r.checkpoint).filename().string();
    }
    return rows_without_time(rows);
  };
  CHECK(strip_dir(serial) == strip_dir(parallel));

  const auto rerun = run_sweep(serial_cfg);
  CHECK(rows_without_time(serial) == rows_without_time(rerun));

  const auto from_disk = read_results_csv(dir_a / "results.csv");
  CHECK(rows_without_time(from_disk) == rows_without_time(serial));
  CHECK(fs::exists(dir_a / "summary.csv"));
  CHECK(fs::exists(dir_a / "results.stream.csv"));

  for (const auto &row : serial) {
    REQUIRE(row.ok());
    const auto pi = policy::load_policy(row.checkpoint);
    envs::EvaluationConfig ec = serial_cfg.evaluation;
    ec.seed = cell_seed(serial_cfg, row.seed);
    CHECK(envs::evaluate_policy("cartpole", pi, ec) == row.performance);
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("divergent cells are recorded, not fatal") {
  const auto dir = scratch("diverge");
  auto doc = small_sweep(dir);
  doc["train"]["learning_rate"] = 1e6;
  doc["train"]["epochs"] = 200;
  doc["sweep"]["values"] = {0.5};
  doc["seeds"] = 1;
  doc["algorithms"] = {{{"label", "BC"}, {"loss", "bc"}}};
  const auto rows = run_sweep(parse_experiment_config(doc));
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].status == "diverged");
  CHECK(std::isnan(rows[0].performance));
  CHECK(summarize(rows)[0].errors == 1);
  fs::remove_all(dir);
}

TEST_CASE("summary arithmetic") {
  auto s = summarize({row_with(1.0, 0), row_with(2.0, 1), row_with(3.0, 2)});
  REQUIRE(s.size() == 1);
  CHECK(s[0].n == 3);
  CHECK(s[0].mean == doctest::Approx(2.0));
  CHECK(s[0].standard_error == doctest::Approx(1.0 / std::sqrt(3.0)));
  CHECK(s[0].standard_error_defined);

  s = summarize({row_with(4.0, 0)});
  CHECK(s[0].standard_error == 0.0);
  CHECK_FALSE(s[0].standard_error_defined);

  s = summarize({row_with(7.0, 0), row_with(7.0, 1), row_with(7.0, 2)});
  CHECK(s[0].standard_error == 0.0);
}

TEST_CASE("csv rows quote awkward fields and round trip") {
  RunResult r = row_with(0.125, 4);
  r.algorithm = "Counter-BC, detached";
  r.status = "error";
  r.error = "bad \"thing\"\nhappened";
  r.performance = std::nan("");
  const auto dir = scratch("csv");
  write_results_csv({r, row_with(-3.5, 1)}, dir / "r.csv");
  const auto back = read_results_csv(dir / "r.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].algorithm == r.algorithm);
  CHECK(back[0].error == r.error);
  CHECK(std::isnan(back[0].performance));
  CHECK(back[1].performance == -3.5);
  CHECK(results_csv_header().rfind("wall_time_s") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("svg chart contains one series per algorithm") {
  std::vector<RunResult> rows = {row_with(1.0, 0), row_with(2.0, 1)};
  RunResult other = row_with(3.0, 0);
  other.algorithm = "Counter-BC";
  rows.push_back(other);
  const auto svg = render_svg(summarize(rows), "test chart");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("Counter-BC") != std::string::npos);
  CHECK(svg.find("test chart") != std::string::npos);
}

TEST_CASE("every shipped config parses") {
  int count = 0;
  for (const auto &entry : fs::directory_iterator(CBC_CONFIG_DIR)) {
    if (entry.path().extension() == ".json") {
      INFO(entry.path().string());
      CHECK_NOTHROW(load_experiment_config(entry.path()));
      ++count;
    }
  }
  CHECK(count >= 4);
}
