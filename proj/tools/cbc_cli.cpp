#include <csignal>
#include <pthread.h>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cbc/dataset.hpp"
#include "cbc/demonstrators.hpp"
#include "cbc/envs.hpp"
#include "cbc/error.hpp"
#include "cbc/harness.hpp"
#include "cbc/policy.hpp"
#include "cbc/rng.hpp"
#include "cbc/teleop/server.hpp"
#include "cbc/trainer.hpp"

namespace fs = std::filesystem;
using namespace cbc;

namespace {

fs::path sibling(const fs::path &checkpoint, const std::string &suffix) {
  fs::path p = checkpoint;
  p.replace_extension();
  return fs::path(p.string() + suffix);
}

int run_gen(const std::string &env, const std::string &noise_kind, double sigma,
            std::size_t pairs, std::uint64_t seed, const fs::path &out) {
  demo::NoiseModel noise{demo::parse_noise_kind(noise_kind), sigma};
  Rng rng = make_stream(seed, Stream::Demonstrations);
  auto ds = demo::generate_dataset(env, noise, pairs, rng);
  ds.provenance()["seed"] = seed;
  data::save_jsonl(ds, out);
  std::cout << "wrote " << ds.size() << " pairs to " << out.string() << '\n';
  return 0;
}

struct TrainArgs {
  fs::path data;
  std::string loss = "bc";
  std::string env;
  fs::path out = "policy.json";
  train::TrainConfig cfg;
};

int run_train(TrainArgs args) {
  const auto ds = data::load_jsonl(args.data);
  args.cfg.loss = train::parse_loss_kind(args.loss);
  if (args.env.empty()) {
    const auto &prov = ds.provenance();
    if (prov.contains("env") && prov["env"].is_string()) {
      args.env = prov["env"].get<std::string>();
    }
  }
  args.cfg.env = args.env;
  if (args.out.has_parent_path()) {
    fs::create_directories(args.out.parent_path());
  }
  auto result = train::train(ds, args.cfg, [&](int epoch, const policy::GaussianPolicy &pi) {
    if (epoch == args.cfg.epochs) {
      return;
    }
    policy::save_policy(pi, sibling(args.out, ".epoch" + std::to_string(epoch) + ".json"));
  });
  policy::save_policy(result.policy, args.out);
  const auto curve = sibling(args.out, ".loss.csv");
  train::write_loss_csv(result.history, curve);
  std::cout << "trained " << train::to_string(args.cfg.loss) << " for " << args.cfg.epochs
            << " epochs on " << ds.size() << " pairs; final loss "
            << result.history.back().loss << '\n'
            << "checkpoint: " << args.out.string() << "\nloss curve: " << curve.string() << '\n';
  return 0;
}

int run_eval(const fs::path &checkpoint, const std::string &env, envs::EvaluationConfig cfg) {
  const auto pi = policy::load_policy(checkpoint);
  const double perf = envs::evaluate_policy(env, pi, cfg);
  std::printf("%.17g\n", perf);
  return 0;
}

int run_sweep(const fs::path &config_path, int workers, bool quiet) {
  auto cfg = harness::load_experiment_config(config_path);
  if (workers >= 0) {
    cfg.workers = workers;
  }
  const auto rows = harness::run_sweep(
      cfg, [quiet](const harness::RunResult &row, std::size_t done, std::size_t total) {
        if (quiet) {
          return;
        }
        std::fprintf(stderr, "[%zu/%zu] %s %s=%g seed=%d: ", done, total, row.algorithm.c_str(),
                     harness::to_string(row.variable).c_str(), row.value, row.seed);
        if (row.ok()) {
          std::fprintf(stderr, "%.4f (%.1fs)\n", row.performance, row.wall_time_s);
        } else {
          std::fprintf(stderr, "%s: %s\n", row.status.c_str(), row.error.c_str());
        }
      });
  const auto summary = harness::summarize(rows);
  harness::print_summary_table(summary, std::cout);
  std::cout << "results: " << (cfg.output_dir / "results.csv").string() << '\n';
  std::size_t failed = 0;
  for (const auto &row : rows) {
    failed += row.ok() ? 0 : 1;
  }
  if (failed > 0) {
    std::cerr << failed << " cell(s) failed\n";
    return 1;
  }
  return 0;
}

int run_plot(const fs::path &in, const fs::path &out, const std::string &title) {
  const auto rows = harness::read_results_csv(in);
  const auto summary = harness::summarize(rows);
  std::ofstream svg(out, std::ios::binary | std::ios::trunc);
  if (!svg) {
    throw Error("cannot open '" + out.string() + "' for writing");
  }
  svg << harness::render_svg(summary, title);
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

int run_serve(teleop::ServerConfig cfg) {
  // Block the shutdown signals before the I/O thread exists so that only
  // sigwait below sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  teleop::TeleopServer server(cfg);
  server.start();
  std::cout << "teleop service listening on http://" << cfg.address << ':' << server.port()
            << " (data dir " << cfg.data_dir.string() << ")\n"
            << std::flush;
  int received = 0;
  sigwait(&signals, &received);
  std::cout << "shutting down\n";
  server.stop();
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Counterfactual behavior cloning toolkit"};
  app.require_subcommand(1);

  // gen
  auto *gen = app.add_subcommand("gen", "Generate synthetic noisy demonstrations");
  std::string gen_env;
  std::string gen_noise = "uniform";
  double gen_sigma = 0.0;
  std::size_t gen_pairs = 400;
  std::uint64_t gen_seed = 0;
  fs::path gen_out;
  gen->add_option("--env", gen_env, "absval, cartpole or intersection")->required();
  gen->add_option("--noise", gen_noise, "uniform, gaussian or random")->capture_default_str();
  gen->add_option("--sigma", gen_sigma, "Noise scale")->capture_default_str();
  gen->add_option("--pairs", gen_pairs, "Number of (s, a) pairs")->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--out", gen_out, "Output JSONL path")->required();

  // train
  auto *tr = app.add_subcommand("train", "Train a policy on a JSONL dataset");
  TrainArgs targs;
  tr->add_option("--data", targs.data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  tr->add_option("--loss", targs.loss, "bc, counterbc, sasaki or ileed")->capture_default_str();
  tr->add_option("--env", targs.env, "Env the dataset belongs to (default: from provenance)");
  tr->add_option("--delta", targs.cfg.delta, "Counterfactual radius")->capture_default_str();
  tr->add_option("--counterfactuals", targs.cfg.counterfactuals, "Samples per pair")
      ->capture_default_str();
  tr->add_flag("--detach-classifier,--detach", targs.cfg.detach_classifier,
               "Treat the restricted-classifier weights as constants");
  tr->add_flag("--resample", targs.cfg.resample_counterfactuals,
               "Redraw counterfactual sets every epoch");
  tr->add_option("--lambda-reg", targs.cfg.lambda_reg)->capture_default_str();
  tr->add_option("--sync-epochs", targs.cfg.sync_epochs)->capture_default_str();
  tr->add_option("--epochs", targs.cfg.epochs)->capture_default_str();
  tr->add_option("--batch-size", targs.cfg.batch_size)->capture_default_str();
  tr->add_option("--lr", targs.cfg.learning_rate)->capture_default_str();
  tr->add_option("--hidden", targs.cfg.hidden)->capture_default_str();
  tr->add_option("--seed", targs.cfg.seed)->capture_default_str();
  tr->add_option("--eval-cadence", targs.cfg.eval_cadence,
                 "Save an intermediate checkpoint every N epochs (0: final only)")
      ->capture_default_str();
  tr->add_option("--out", targs.out, "Checkpoint path")->capture_default_str();

  // eval
  auto *ev = app.add_subcommand("eval", "Roll out a checkpoint and print its performance");
  fs::path ev_policy;
  std::string ev_env;
  envs::EvaluationConfig ev_cfg;
  bool ev_stochastic = false;
  ev->add_option("--policy", ev_policy, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--env", ev_env)->required();
  ev->add_option("--rollouts", ev_cfg.rollouts)->capture_default_str();
  ev->add_option("--horizon", ev_cfg.horizon, "0: the env's episode limit")->capture_default_str();
  ev->add_option("--seed", ev_cfg.seed)->capture_default_str();
  ev->add_flag("--stochastic", ev_stochastic, "Sample actions instead of using the mean");

  // sweep
  auto *sw = app.add_subcommand("sweep", "Run a declarative experiment sweep");
  fs::path sw_config;
  int sw_workers = -1;
  bool sw_quiet = false;
  sw->add_option("--config", sw_config)->required()->check(CLI::ExistingFile);
  sw->add_option("--workers", sw_workers, "Override the config's worker count");
  sw->add_flag("--quiet", sw_quiet);

  // plot
  auto *pl = app.add_subcommand("plot", "Render a results CSV as an SVG line chart");
  fs::path pl_in;
  fs::path pl_out;
  std::string pl_title;
  pl->add_option("--in", pl_in, "results.csv from a sweep")->required()->check(CLI::ExistingFile);
  pl->add_option("--out", pl_out)->required();
  pl->add_option("--title", pl_title);

  // serve
  auto *sv = app.add_subcommand("serve", "Run the teleoperation service");
  teleop::ServerConfig sv_cfg;
  int sv_tick_ms = 50;
  fs::path sv_static;
  sv->add_option("--port", sv_cfg.port)->capture_default_str();
  sv->add_option("--address", sv_cfg.address)->capture_default_str();
  sv->add_option("--data-dir", sv_cfg.data_dir)->capture_default_str();
  sv->add_option("--static-dir", sv_static, "Frontend assets served at /");
  sv->add_option("--tick-ms", sv_tick_ms)->capture_default_str()->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      return run_gen(gen_env, gen_noise, gen_sigma, gen_pairs, gen_seed, gen_out);
    }
    if (*tr) {
      return run_train(targs);
    }
    if (*ev) {
      ev_cfg.deterministic = !ev_stochastic;
      return run_eval(ev_policy, ev_env, ev_cfg);
    }
    if (*sw) {
      return run_sweep(sw_config, sw_workers, sw_quiet);
    }
    if (*pl) {
      return run_plot(pl_in, pl_out, pl_title);
    }
    if (*sv) {
      sv_cfg.tick_period = std::chrono::milliseconds(sv_tick_ms);
      if (!sv_static.empty()) {
        sv_cfg.static_dir = sv_static;
      }
      return run_serve(sv_cfg);
    }
  } catch (const TrainingDiverged &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
