#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <set>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "cbc/dataset.hpp"
#include "cbc/envs.hpp"
#include "cbc/teleop/server.hpp"
#include "cbc/teleop/session.hpp"

using namespace cbc;
using namespace cbc::teleop;
namespace fs = std::filesystem;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

fs::path scratch(const std::string &name) {
  const auto dir = fs::temp_directory_path() / ("cbc_teleop_" + name);
  fs::remove_all(dir);
  return dir;
}

struct HttpReply {
  unsigned status = 0;
  json body;
};

HttpReply request(std::uint16_t port, http::verb verb, const std::string &target,
                  const std::string &body = {}) {
  net::io_context io;
  tcp::resolver resolver(io);
  beast::tcp_stream stream(io);
  stream.connect(resolver.resolve("127.0.0.1", std::to_string(port)));
  http::request<http::string_body> req{verb, target, 11};
  req.set(http::field::host, "127.0.0.1");
  req.set(http::field::content_type, "application/json");
  req.body() = body;
  req.prepare_payload();
  http::write(stream, req);
  beast::flat_buffer buffer;
  http::response<http::string_body> res;
  http::read(stream, buffer, res);
  beast::error_code ec;
  stream.socket().shutdown(tcp::socket::shutdown_both, ec);
  HttpReply out;
  out.status = res.result_int();
  out.body = json::parse(res.body(), nullptr, false);
  return out;
}

class WsClient {
public:
  WsClient(std::uint16_t port, const std::string &target) : ws_(io_) {
    tcp::resolver resolver(io_);
    net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", target);
  }

  void send(const json &msg) { ws_.write(net::buffer(msg.dump())); }

  json receive() {
    beast::flat_buffer buffer;
    ws_.read(buffer);
    return json::parse(beast::buffers_to_string(buffer.data()));
  }

  // Reads until a message of the given type; counts the state messages on the way.
  json receive_until(const std::string &type, int *states = nullptr) {
    for (;;) {
      auto msg = receive();
      if (msg["type"] == type) {
        return msg;
      }
      if (states && msg["type"] == "state") {
        ++*states;
      }
    }
  }

  void close() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }

private:
  net::io_context io_;
  websocket::stream<tcp::socket> ws_;
};

struct RunningServer {
  explicit RunningServer(const fs::path &data_dir, int tick_ms = 5,
                         std::chrono::milliseconds pause = std::chrono::milliseconds(60'000)) {
    ServerConfig cfg;
    cfg.port = 0;
    cfg.data_dir = data_dir;
    cfg.tick_period = std::chrono::milliseconds(tick_ms);
    cfg.pause_timeout = pause;
    server = std::make_unique<TeleopServer>(cfg);
    server->start();
  }
  ~RunningServer() { server->stop(); }
  std::uint16_t port() const { return server->port(); }
  std::unique_ptr<TeleopServer> server;
};

} // namespace

TEST_CASE("wire messages parse") {
  const auto a = parse_client_message(R"({"type":"action","a":[0.5,-2]})");
  REQUIRE(std::holds_alternative<ActionMessage>(a));
  CHECK(std::get<ActionMessage>(a).a[1] == -2.0);
  CHECK(std::holds_alternative<ResetMessage>(parse_client_message(R"({"type":"reset"})")));
  CHECK(std::holds_alternative<FinishMessage>(parse_client_message(R"({"type":"finish"})")));
  CHECK_THROWS_AS(parse_client_message("{"), SessionError);
  CHECK_THROWS_AS(parse_client_message(R"({"type":"jump"})"), SessionError);
  CHECK_THROWS_AS(parse_client_message(R"({"type":"action","a":["x"]})"), SessionError);
  CHECK_THROWS_AS(parse_client_message(R"({"a":[1]})"), SessionError);
}

TEST_CASE("env ids are vetted for teleoperation") {
  CHECK_NOTHROW(check_teleoperable("cartpole"));
  CHECK_NOTHROW(check_teleoperable("intersection"));
  CHECK_THROWS_AS(check_teleoperable("absval"), NotTeleoperable);
  CHECK_THROWS_AS(check_teleoperable("pong"), UnknownEnv);
}

TEST_CASE("cartpole session metadata") {
  SessionCore core("abc", "cartpole", 1);
  const auto meta = core.metadata();
  CHECK(meta["action_dim"] == 1);
  CHECK(meta["state_dim"] == 4);
  CHECK(meta["action_low"] == json::array({-1.0}));
  CHECK(meta["action_high"] == json::array({1.0}));
  CHECK(meta["tick_ms"] == 50);
  CHECK(meta["render_schema"]["kind"] == "cartpole");
}

TEST_CASE("without input the zero action is held, the pole falls and the env resets") {
  SessionCore core("s", "cartpole", 2);
  int resets = 0;
  std::size_t ticks = 0;
  while (resets == 0 && ticks < 400) {
    const auto msg = core.tick();
    ++ticks;
    resets += msg["terminal"].get<bool>() ? 1 : 0;
  }
  CHECK(resets == 1);
  CHECK(ticks < 200);
  CHECK(core.episode_starts().size() == 2);
  CHECK(core.episode_starts()[1] == ticks);
  for (const auto &p : core.buffer()) {
    CHECK(p.a[0] == 0.0);
  }
}

TEST_CASE("recorded actions are the clipped held action and states are pre-step") {
  SessionCore core("s", "intersection", 3);
  Vector a(2);
  a << 0.3, 4.0;
  core.set_action(a);
  const Vector s0 = core.env().state();
  core.tick();
  core.tick();
  REQUIRE(core.recorded_pairs() == 2);
  CHECK(core.buffer()[0].s == s0);
  CHECK(core.buffer()[0].a[0] == 0.3);
  CHECK(core.buffer()[0].a[1] == 1.0);
  CHECK(core.buffer()[1].a == core.buffer()[0].a);
  const auto step = envs::intersection_transition(s0, core.buffer()[0].a);
  CHECK(core.buffer()[1].s == step.next_state);
  CHECK_THROWS_AS(core.set_action(Vector::Zero(3)), SessionError);
  CHECK_THROWS_AS(core.set_action(Vector::Constant(2, NAN)), SessionError);
}

TEST_CASE("finish writes a loadable dataset once") {
  const auto dir = scratch("finish");
  SessionCore core("sess1", "cartpole", 4);
  CHECK_THROWS_AS(core.finish(dir), SessionError);
  CHECK_FALSE(fs::exists(dir / "sess1.jsonl"));
  for (int i = 0; i < 400; ++i) {
    core.tick();
  }
  const auto path = core.finish(dir);
  const auto ds = data::load_jsonl(path);
  CHECK(ds.size() == 400);
  CHECK(ds.state_dim() == 4);
  CHECK(ds.action_dim() == 1);
  CHECK(ds.provenance()["env"] == "cartpole");
  CHECK(ds.provenance()["session"] == "sess1");
  CHECK(ds.provenance().contains("wall_clock"));
  CHECK(ds.provenance()["episode_starts"][0] == 0);
  CHECK_THROWS_AS(core.finish(dir), SessionError);
  CHECK_THROWS_AS(core.tick(), SessionError);
  fs::remove_all(dir);
}

TEST_CASE("reset before recording reuses the episode slot") {
  SessionCore core("s", "cartpole", 5);
  core.reset();
  core.reset();
  CHECK(core.episode_starts().size() == 1);
  core.tick();
  core.reset();
  CHECK(core.episode_starts() == std::vector<std::size_t>{0, 1});
}

TEST_CASE("sessions are isolated") {
  SessionCore a("a", "cartpole", 6);
  SessionCore b("b", "cartpole", 6);
  a.set_action(Vector::Constant(1, 1.0));
  for (int i = 0; i < 5; ++i) {
    a.tick();
    b.tick();
  }
  CHECK(b.held_action()[0] == 0.0);
  CHECK(b.buffer()[4].a[0] == 0.0);
  CHECK(a.buffer()[4].s != b.buffer()[4].s);
}

TEST_CASE("http endpoints") {
  const auto dir = scratch("http");
  RunningServer srv(dir);
  const auto port = srv.port();
  REQUIRE(port != 0);

  const auto created = request(port, http::verb::post, "/session", R"({"env":"cartpole"})");
  CHECK(created.status == 201);
  CHECK(created.body["action_dim"] == 1);
  CHECK(created.body["action_low"] == json::array({-1.0}));
  const auto other = request(port, http::verb::post, "/session", R"({"env":"cartpole"})");
  CHECK(other.body["session"] != created.body["session"]);
  CHECK(srv.server->session_count() == 2);

  CHECK(request(port, http::verb::post, "/session", R"({"env":"absval"})").status == 400);
  CHECK(request(port, http::verb::post, "/session", R"({"env":"tetris"})").status == 404);
  CHECK(request(port, http::verb::post, "/session", "not json").status == 400);

  const std::string id = created.body["session"];
  const auto got = request(port, http::verb::get, "/session/" + id);
  CHECK(got.status == 200);
  CHECK(got.body["status"] == "idle");
  CHECK(request(port, http::verb::get, "/session/" + id + "/stream").status == 426);
  CHECK(request(port, http::verb::delete_, "/session/" + id).status == 200);
  CHECK(request(port, http::verb::get, "/session/" + id).status == 404);
  CHECK(srv.server->session_count() == 1);
  CHECK(request(port, http::verb::get, "/datasets/nothing.jsonl").status == 404);
  fs::remove_all(dir);
}

TEST_CASE("websocket session records what it streams") {
  const auto dir = scratch("ws");
  RunningServer srv(dir);
  const auto port = srv.port();
  const auto created = request(port, http::verb::post, "/session", R"({"env":"cartpole"})");
  const std::string id = created.body["session"];

  WsClient ws(port, "/session/" + id + "/stream");
  const auto first = ws.receive();
  CHECK(first["type"] == "state");
  CHECK(first["s"].size() == 4);
  CHECK(first["recorded"] == 0);
  int states = 0;
  ws.send({{"type", "action"}, {"a", {5.0}}});
  while (states < 30) {
    const auto msg = ws.receive();
    REQUIRE(msg["type"] == "state");
    ++states;
  }
  ws.send({{"type", "action"}, {"a", {1.0, 2.0}}});
  ws.receive_until("error", &states);
  ws.send({{"type", "finish"}});
  const auto saved = ws.receive_until("saved", &states);
  const std::size_t pairs = saved["pairs"];
  CHECK(pairs == static_cast<std::size_t>(states));

  const auto ds = data::load_jsonl(saved["path"].get<std::string>());
  CHECK(ds.size() == pairs);
  // Before the first action arrived the zero action was held; afterwards the
  // clipped constant.
  bool seen_push = false;
  for (const auto &p : ds.pairs()) {
    if (p.a[0] != 0.0) {
      seen_push = true;
    }
    CHECK((p.a[0] == 0.0 || p.a[0] == 1.0));
    if (seen_push) {
      CHECK(p.a[0] == 1.0);
    }
  }
  CHECK(seen_push);

  ws.send({{"type", "finish"}});
  const auto again = ws.receive_until("error");
  CHECK(again["message"].get<std::string>().find("finished") != std::string::npos);

  const auto file = request(port, http::verb::get, "/datasets/" + saved["file"].get<std::string>());
  CHECK(file.status == 200);
  ws.close();
  fs::remove_all(dir);
}

TEST_CASE("a second stream on the same session is refused") {
  const auto dir = scratch("conflict");
  RunningServer srv(dir);
  const auto created = request(srv.port(), http::verb::post, "/session", R"({"env":"intersection"})");
  const std::string id = created.body["session"];
  WsClient first(srv.port(), "/session/" + id + "/stream");
  first.receive();
  CHECK_THROWS(WsClient(srv.port(), "/session/" + id + "/stream"));
  CHECK_THROWS(WsClient(srv.port(), "/session/nope/stream"));
  first.close();
  fs::remove_all(dir);
}

TEST_CASE("a dropped connection pauses the session and it is discarded after the timeout") {
  const auto dir = scratch("pause");
  RunningServer srv(dir, 5, std::chrono::milliseconds(300));
  const auto created = request(srv.port(), http::verb::post, "/session", R"({"env":"cartpole"})");
  const std::string id = created.body["session"];
  {
    WsClient ws(srv.port(), "/session/" + id + "/stream");
    ws.receive();
    ws.receive();
    ws.close();
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  const auto paused = request(srv.port(), http::verb::get, "/session/" + id);
  CHECK(paused.status == 200);
  CHECK(paused.body["status"] == "paused");
  const std::size_t recorded = paused.body["recorded"];
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  CHECK(request(srv.port(), http::verb::get, "/session/" + id).body["recorded"] == recorded);
  std::this_thread::sleep_for(std::chrono::milliseconds(400));
  CHECK(request(srv.port(), http::verb::get, "/session/" + id).status == 404);
  CHECK(fs::is_empty(dir));
  fs::remove_all(dir);
}

TEST_CASE("reconnecting within the timeout resumes the session") {
  const auto dir = scratch("resume");
  RunningServer srv(dir, 5, std::chrono::milliseconds(2000));
  const auto created = request(srv.port(), http::verb::post, "/session", R"({"env":"cartpole"})");
  const std::string id = created.body["session"];
  {
    WsClient ws(srv.port(), "/session/" + id + "/stream");
    ws.receive();
    ws.receive();
    ws.close();
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  WsClient again(srv.port(), "/session/" + id + "/stream");
  CHECK(again.receive()["type"] == "state");
  CHECK(request(srv.port(), http::verb::get, "/session/" + id).body["status"] == "running");
  again.close();
  fs::remove_all(dir);
}
