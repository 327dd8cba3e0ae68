#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cbc/dataset.hpp"
#include "cbc/envs.hpp"
#include "cbc/rng.hpp"

namespace cbc::teleop {

using Vector = Eigen::VectorXd;

enum class SessionStatus { Idle, Running, Paused, Finished };

std::string to_string(SessionStatus status);

/// Thrown for session-level protocol violations (finish twice, empty buffer,
/// malformed wire message). Maps to an error envelope, never a dropped socket.
class SessionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Thrown by open_session-style lookups; the server maps it to 404.
class UnknownEnv : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Thrown for envs that exist but cannot be driven in real time; maps to 400.
class NotTeleoperable : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Client-to-server envelopes.
struct ActionMessage {
  Vector a;
};
struct ResetMessage {};
struct FinishMessage {};
using ClientMessage = std::variant<ActionMessage, ResetMessage, FinishMessage>;

/// Throws SessionError on malformed JSON, unknown types or non-finite numbers.
ClientMessage parse_client_message(const std::string &text);

/// The clock-free part of a teleoperation session: one env, the held action
/// and the recording buffer. The server drives tick() from its timer; tests
/// drive it directly. Not thread-safe.
class SessionCore {
public:
  SessionCore(std::string id, const std::string &env_id, std::uint64_t seed,
              int tick_period_ms = 50);

  const std::string &id() const { return id_; }
  const envs::Environment &env() const { return *env_; }
  SessionStatus status() const { return status_; }
  void set_status(SessionStatus status);
  int tick_period_ms() const { return tick_period_ms_; }

  /// {session, env, state_dim, action_dim, action_low, action_high,
  /// render_schema, tick_ms}
  nlohmann::json metadata() const;

  /// Replaces the held action. Throws SessionError on wrong width or
  /// non-finite entries.
  void set_action(const Vector &a);
  const Vector &held_action() const { return held_; }

  /// Steps the env with the held action and records (s_before, clipped a).
  /// A terminal step auto-resets and opens a new episode.
  nlohmann::json tick();

  /// Starts a new episode immediately.
  nlohmann::json reset();

  /// Writes the buffer as JSONL into data_dir and returns the path. Throws
  /// SessionError when already finished or when nothing was recorded.
  std::filesystem::path finish(const std::filesystem::path &data_dir);

  std::size_t recorded_pairs() const { return buffer_.size(); }
  std::size_t ticks() const { return ticks_; }
  const std::vector<std::size_t> &episode_starts() const { return episode_starts_; }
  const std::vector<data::StateActionPair> &buffer() const { return buffer_; }

  nlohmann::json state_message(double reward, bool terminal) const;

private:
  void start_episode();

  std::string id_;
  std::unique_ptr<envs::Environment> env_;
  Rng rng_;
  int tick_period_ms_;
  SessionStatus status_ = SessionStatus::Idle;
  Vector held_;
  std::vector<data::StateActionPair> buffer_;
  std::vector<std::size_t> episode_starts_;
  std::size_t ticks_ = 0;
  std::size_t episodes_ = 0;
};

/// Validates an env id for teleoperation; throws UnknownEnv or NotTeleoperable.
void check_teleoperable(const std::string &env_id);

} // namespace cbc::teleop
