#include "cbc/teleop/session.hpp"

#include <chrono>
#include <cmath>
#include <ctime>

#include "cbc/error.hpp"

namespace cbc::teleop {

using nlohmann::json;

namespace {

std::vector<double> to_std(const Vector &v) { return {v.data(), v.data() + v.size()}; }

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

} // namespace

std::string to_string(SessionStatus status) {
  switch (status) {
  case SessionStatus::Idle:
    return "idle";
  case SessionStatus::Running:
    return "running";
  case SessionStatus::Paused:
    return "paused";
  case SessionStatus::Finished:
    return "finished";
  }
  return "unknown";
}

ClientMessage parse_client_message(const std::string &text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error &e) {
    throw SessionError(std::string("message is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("type") || !doc["type"].is_string()) {
    throw SessionError("message needs a string 'type'");
  }
  const auto type = doc["type"].get<std::string>();
  if (type == "action") {
    const auto it = doc.find("a");
    if (it == doc.end() || !it->is_array()) {
      throw SessionError("action message needs an array 'a'");
    }
    Vector a(static_cast<Eigen::Index>(it->size()));
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto &x = (*it)[i];
      if (!x.is_number()) {
        throw SessionError("action components must be numbers");
      }
      a[static_cast<Eigen::Index>(i)] = x.get<double>();
    }
    if (!a.allFinite()) {
      throw SessionError("action components must be finite");
    }
    return ActionMessage{std::move(a)};
  }
  if (type == "reset") {
    return ResetMessage{};
  }
  if (type == "finish") {
    return FinishMessage{};
  }
  throw SessionError("unknown message type '" + type + "'");
}

void check_teleoperable(const std::string &env_id) {
  std::unique_ptr<envs::Environment> env;
  try {
    env = envs::make_env(env_id);
  } catch (const InvalidInput &) {
    throw UnknownEnv("unknown env '" + env_id + "'");
  }
  if (!env->teleoperable()) {
    throw NotTeleoperable("env '" + env_id + "' has no temporal dynamics to teleoperate");
  }
}

SessionCore::SessionCore(std::string id, const std::string &env_id, std::uint64_t seed,
                         int tick_period_ms)
    : id_(std::move(id)), rng_(make_stream(seed, Stream::EvalReset)),
      tick_period_ms_(tick_period_ms) {
  check_teleoperable(env_id);
  if (tick_period_ms < 1) {
    throw InvalidInput("tick period must be >= 1 ms");
  }
  env_ = envs::make_env(env_id);
  held_ = Vector::Zero(env_->action_spec().dim());
  start_episode();
}

void SessionCore::set_status(SessionStatus status) {
  if (status_ == SessionStatus::Finished && status != SessionStatus::Finished) {
    throw SessionError("session already finished");
  }
  status_ = status;
}

json SessionCore::metadata() const {
  const auto &spec = env_->action_spec();
  return {
      {"session", id_},
      {"env", env_->id()},
      {"state_dim", env_->state_dim()},
      {"action_dim", spec.dim()},
      {"action_low", to_std(spec.low)},
      {"action_high", to_std(spec.high)},
      {"render_schema", env_->render_schema()},
      {"tick_ms", tick_period_ms_},
      {"status", to_string(status_)},
  };
}

void SessionCore::set_action(const Vector &a) {
  if (a.size() != env_->action_spec().dim()) {
    throw SessionError("action has " + std::to_string(a.size()) + " components, env '" +
                       env_->id() + "' expects " + std::to_string(env_->action_spec().dim()));
  }
  if (!a.allFinite()) {
    throw SessionError("action components must be finite");
  }
  held_ = a;
}

void SessionCore::start_episode() {
  env_->reset(rng_);
  episode_starts_.push_back(buffer_.size());
  ++episodes_;
}

json SessionCore::tick() {
  if (status_ == SessionStatus::Finished) {
    throw SessionError("session already finished");
  }
  const Vector s_before = env_->state();
  const Vector applied = env_->action_spec().clip(held_);
  const auto step = env_->step(applied);
  buffer_.push_back({s_before, applied});
  ++ticks_;
  auto msg = state_message(step.reward, step.terminal);
  if (step.terminal || env_->steps_taken() >= env_->max_steps()) {
    start_episode();
  }
  return msg;
}

json SessionCore::reset() {
  if (status_ == SessionStatus::Finished) {
    throw SessionError("session already finished");
  }
  // A reset before anything was recorded in this episode reuses its slot.
  if (!episode_starts_.empty() && episode_starts_.back() == buffer_.size()) {
    episode_starts_.pop_back();
    --episodes_;
  }
  start_episode();
  return state_message(0.0, false);
}

json SessionCore::state_message(double reward, bool terminal) const {
  return {
      {"type", "state"},
      {"s", to_std(env_->state())},
      {"render", env_->render()},
      {"reward", reward},
      {"terminal", terminal},
      {"recorded", buffer_.size()},
      {"episode", episodes_},
  };
}

std::filesystem::path SessionCore::finish(const std::filesystem::path &data_dir) {
  if (status_ == SessionStatus::Finished) {
    throw SessionError("session already finished");
  }
  if (buffer_.empty()) {
    throw SessionError("nothing recorded yet; the dataset would be empty");
  }
  std::vector<std::size_t> starts;
  for (auto s : episode_starts_) {
    if (s < buffer_.size()) {
      starts.push_back(s);
    }
  }
  json provenance = {
      {"env", env_->id()},
      {"demonstrator", "human"},
      {"session", id_},
      {"wall_clock", utc_now()},
      {"tick_ms", tick_period_ms_},
      {"episode_starts", starts},
  };
  data::Dataset ds(env_->state_dim(), env_->action_spec().dim(), provenance);
  for (const auto &pair : buffer_) {
    ds.add(pair);
  }
  std::filesystem::create_directories(data_dir);
  const auto path = data_dir / (id_ + ".jsonl");
  data::save_jsonl(ds, path);
  status_ = SessionStatus::Finished;
  return path;
}

} // namespace cbc::teleop
