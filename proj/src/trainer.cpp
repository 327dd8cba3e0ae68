#include "cbc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>

#include "cbc/envs.hpp"
#include "cbc/error.hpp"
#include "cbc/losses.hpp"
#include "cbc/rng.hpp"

namespace cbc::train {

namespace {

constexpr double kEmaWindow = 50.0;
constexpr double kBlowUpFactor = 10.0;

bool finite_gradients(const nn::Gradients &g) {
  for (const auto &layer : g.layers) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      return false;
    }
  }
  return true;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

} // namespace

LossKind parse_loss_kind(std::string_view name) {
  if (name == "bc") {
    return LossKind::BC;
  }
  if (name == "counterbc") {
    return LossKind::CounterBC;
  }
  if (name == "sasaki") {
    return LossKind::Sasaki;
  }
  if (name == "ileed") {
    return LossKind::Ileed;
  }
  throw InvalidInput("unknown loss '" + std::string(name) +
                     "' (expected bc, counterbc, sasaki or ileed)");
}

std::string to_string(LossKind kind) {
  switch (kind) {
  case LossKind::BC:
    return "bc";
  case LossKind::CounterBC:
    return "counterbc";
  case LossKind::Sasaki:
    return "sasaki";
  case LossKind::Ileed:
    return "ileed";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (epochs < 1) {
    throw InvalidInput("epochs must be >= 1");
  }
  if (batch_size < 1) {
    throw InvalidInput("batch size must be >= 1");
  }
  if (!(learning_rate > 0.0)) {
    throw InvalidInput("learning rate must be > 0");
  }
  if (hidden < 1) {
    throw InvalidInput("hidden width must be >= 1");
  }
  if (!(delta >= 0.0)) {
    throw InvalidInput("delta must be >= 0");
  }
  if (counterfactuals < 0) {
    throw InvalidInput("counterfactual count must be >= 0");
  }
  if (!(lambda_reg >= 0.0)) {
    throw InvalidInput("lambda_reg must be >= 0");
  }
  if (sync_epochs < 1) {
    throw InvalidInput("sync_epochs must be >= 1");
  }
  if (eval_cadence < 0) {
    throw InvalidInput("eval cadence must be >= 0");
  }
}

TrainResult train(const data::Dataset &ds, const TrainConfig &cfg,
                  const CheckpointFn &on_checkpoint) {
  cfg.validate();
  if (ds.empty()) {
    throw InvalidInput("cannot train on an empty dataset");
  }
  ActionSpec actions = ActionSpec::unit_box(ds.action_dim());
  if (!cfg.env.empty()) {
    auto env = envs::make_env(cfg.env);
    if (env->state_dim() != ds.state_dim() || env->action_spec().dim() != ds.action_dim()) {
      throw InvalidInput("dataset dims (" + std::to_string(ds.state_dim()) + ", " +
                         std::to_string(ds.action_dim()) + ") do not match env '" + cfg.env +
                         "' (" + std::to_string(env->state_dim()) + ", " +
                         std::to_string(env->action_spec().dim()) + ")");
    }
    actions = env->action_spec();
  }

  auto normalizer = (cfg.normalize_states && ds.size() >= 2)
                        ? data::fit_normalizer(ds)
                        : data::NormalizationStats::identity(ds.state_dim());

  Rng init_rng = make_stream(cfg.seed, Stream::Init);
  Rng shuffle_rng = make_stream(cfg.seed, Stream::Shuffle);
  Rng counterfactual_rng = make_stream(cfg.seed, Stream::Counterfactuals);

  auto policy =
      policy::GaussianPolicy::create(ds.state_dim(), actions, cfg.hidden, init_rng, normalizer);
  nn::AdamConfig adam_config;
  adam_config.learning_rate = cfg.learning_rate;
  auto adam = nn::AdamState::for_network(policy.backbone(), adam_config);

  std::optional<losses::CounterfactualBatch> counterfactuals;
  if (cfg.loss == LossKind::CounterBC) {
    counterfactuals = losses::sample_counterfactuals(ds, cfg.delta, cfg.counterfactuals, actions,
                                                     counterfactual_rng);
  }

  std::optional<nn::DenseNetwork> expertise;
  std::optional<nn::AdamState> expertise_adam;
  if (cfg.loss == LossKind::Ileed) {
    Rng expertise_rng = make_stream(cfg.seed, Stream::ExpertiseInit);
    expertise = losses::make_expertise_network(ds.state_dim(), cfg.hidden, expertise_rng);
    expertise_adam = nn::AdamState::for_network(*expertise, adam_config);
  }

  std::optional<policy::GaussianPolicy> previous;
  if (cfg.loss == LossKind::Sasaki) {
    previous = policy;
  }

  const std::size_t n = ds.size();
  const std::size_t batch_size = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result{policy, {}, std::nullopt};
  result.history.reserve(static_cast<std::size_t>(cfg.epochs));
  // Seeded with the loss of the untouched initial policy on the first batch.
  std::optional<double> ema;
  const double ema_alpha = 2.0 / (kEmaWindow + 1.0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (previous && epoch > 1 && (epoch - 1) % cfg.sync_epochs == 0) {
      previous = policy;
    }
    if (counterfactuals && cfg.resample_counterfactuals && epoch > 1) {
      counterfactuals = losses::sample_counterfactuals(ds, cfg.delta, cfg.counterfactuals,
                                                       actions, counterfactual_rng);
    }
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    double entropy_sum = 0.0;
    double kl_sum = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < n; start += batch_size, ++batch_index) {
      const std::size_t count = std::min(batch_size, n - start);
      const std::span<const std::size_t> indices(order.data() + start, count);

      losses::LossReport report;
      nn::Gradients grads;
      std::optional<nn::Gradients> expertise_grads;
      switch (cfg.loss) {
      case LossKind::BC: {
        auto r = losses::bc_loss(policy, losses::make_pair_batch(ds, indices));
        report = r.report;
        grads = std::move(r.grads);
        break;
      }
      case LossKind::CounterBC: {
        auto r = losses::counter_bc_loss(policy, counterfactuals->subset(indices),
                                         cfg.detach_classifier);
        report = r.report;
        grads = std::move(r.grads);
        break;
      }
      case LossKind::Sasaki: {
        auto r = losses::sasaki_loss(policy, *previous, losses::make_pair_batch(ds, indices));
        report = r.report;
        grads = std::move(r.grads);
        break;
      }
      case LossKind::Ileed: {
        auto r = losses::ileed_loss(policy, *expertise, losses::make_pair_batch(ds, indices),
                                    cfg.lambda_reg);
        report = r.report;
        grads = std::move(r.policy_grads);
        expertise_grads = std::move(r.expertise_grads);
        break;
      }
      }

      if (!std::isfinite(report.loss) || !finite_gradients(grads) ||
          (expertise_grads && !finite_gradients(*expertise_grads))) {
        throw TrainingDiverged(epoch, batch_index, "non-finite loss or gradient");
      }
      if (!ema) {
        ema = report.loss;
      }
      nn::adam_step(policy.backbone(), grads, adam);
      if (expertise_grads) {
        nn::adam_step(*expertise, *expertise_grads, *expertise_adam);
      }
      const double weight = static_cast<double>(count);
      loss_sum += report.loss * weight;
      if (report.entropy) {
        entropy_sum += *report.entropy * weight;
        kl_sum += *report.kl * weight;
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(n);
    if (cfg.loss == LossKind::CounterBC) {
      log.entropy = entropy_sum / static_cast<double>(n);
      log.kl = kl_sum / static_cast<double>(n);
    }
    const double previous_ema = *ema;
    ema = previous_ema + ema_alpha * (log.loss - previous_ema);
    if (*ema - previous_ema > (kBlowUpFactor - 1.0) * std::max(std::abs(previous_ema), 1.0)) {
      throw TrainingDiverged(epoch, batch_index - 1,
                             "loss moving average jumped from " + fmt_double(previous_ema) +
                                 " to " + fmt_double(*ema));
    }
    log.loss_ema = *ema;
    result.history.push_back(log);

    if (on_checkpoint && cfg.eval_cadence > 0 && epoch % cfg.eval_cadence == 0 &&
        epoch != cfg.epochs) {
      on_checkpoint(epoch, policy);
    }
  }

  if (on_checkpoint) {
    on_checkpoint(cfg.epochs, policy);
  }
  result.policy = std::move(policy);
  result.expertise = std::move(expertise);
  return result;
}

void write_loss_csv(const std::vector<EpochLog> &history, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open '" + path.string() + "' for writing");
  }
  out << "epoch,loss,entropy,kl,loss_ema\n";
  for (const auto &log : history) {
    out << log.epoch << ',' << fmt_double(log.loss) << ','
        << (log.entropy ? fmt_double(*log.entropy) : "") << ','
        << (log.kl ? fmt_double(*log.kl) : "") << ',' << fmt_double(log.loss_ema) << '\n';
  }
}

} // namespace cbc::train
