#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace cbc::teleop {

struct ServerConfig {
  std::string address = "127.0.0.1";
  /// 0 picks a free port; see TeleopServer::port().
  std::uint16_t port = 8080;
  std::filesystem::path data_dir = "teleop_data";
  /// Served at / when set (the browser frontend's build output).
  std::optional<std::filesystem::path> static_dir;
  std::chrono::milliseconds tick_period{50};
  std::chrono::milliseconds pause_timeout{60'000};
};

/// HTTP + WebSocket teleoperation service.
///
///   POST   /session              {"env": id} -> 201 session metadata
///   GET    /session/{id}         -> metadata and status
///   DELETE /session/{id}         -> discards the session unrecorded
///   GET    /session/{id}/stream  WebSocket carrying the JSON envelopes
///   GET    /datasets/{file}      saved JSONL files
///   GET    /...                  static assets
///
/// Everything runs on one I/O thread, which serializes all session state.
class TeleopServer {
public:
  explicit TeleopServer(ServerConfig config);
  ~TeleopServer();
  TeleopServer(const TeleopServer &) = delete;
  TeleopServer &operator=(const TeleopServer &) = delete;

  /// Binds and starts the I/O thread.
  void start();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  void stop();

  std::uint16_t port() const;
  std::size_t session_count() const;

  struct Impl;

private:
  std::unique_ptr<Impl> impl_;
};

} // namespace cbc::teleop
