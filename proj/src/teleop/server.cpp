#include "cbc/teleop/server.hpp"

#include <atomic>
#include <deque>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "cbc/error.hpp"
#include "cbc/teleop/session.hpp"

namespace cbc::teleop {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;

Response json_response(const Request &req, http::status status, const json &body) {
  Response res{status, req.version()};
  res.set(http::field::content_type, "application/json");
  res.set(http::field::access_control_allow_origin, "*");
  res.keep_alive(req.keep_alive());
  res.body() = body.dump();
  res.prepare_payload();
  return res;
}

Response error_response(const Request &req, http::status status, const std::string &message) {
  return json_response(req, status, {{"error", message}});
}

std::string mime_type(const fs::path &path) {
  const auto ext = path.extension().string();
  if (ext == ".html" || ext == ".htm") {
    return "text/html";
  }
  if (ext == ".js" || ext == ".mjs") {
    return "text/javascript";
  }
  if (ext == ".css") {
    return "text/css";
  }
  if (ext == ".json") {
    return "application/json";
  }
  if (ext == ".jsonl") {
    return "application/x-ndjson";
  }
  if (ext == ".svg") {
    return "image/svg+xml";
  }
  if (ext == ".png") {
    return "image/png";
  }
  return "application/octet-stream";
}

std::optional<std::string> read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    return std::nullopt;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Resolves a request path under root, refusing anything that escapes it.
std::optional<fs::path> resolve_under(const fs::path &root, std::string_view target) {
  if (target.find("..") != std::string_view::npos) {
    return std::nullopt;
  }
  std::string rel(target);
  while (!rel.empty() && rel.front() == '/') {
    rel.erase(rel.begin());
  }
  if (rel.empty()) {
    rel = "index.html";
  }
  fs::path full = root / rel;
  if (fs::is_directory(full)) {
    full /= "index.html";
  }
  if (!fs::is_regular_file(full)) {
    return std::nullopt;
  }
  return full;
}

std::vector<std::string> split_path(std::string_view target) {
  if (const auto q = target.find('?'); q != std::string_view::npos) {
    target = target.substr(0, q);
  }
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= target.size()) {
    const auto end = target.find('/', start);
    const auto piece = target.substr(start, end == std::string_view::npos ? target.size() - start
                                                                           : end - start);
    if (!piece.empty()) {
      parts.emplace_back(piece);
    }
    if (end == std::string_view::npos) {
      break;
    }
    start = end + 1;
  }
  return parts;
}

} // namespace

class StreamConnection;

struct LiveSession {
  LiveSession(net::io_context &io, SessionCore c)
      : core(std::move(c)), tick_timer(io), pause_timer(io) {}

  SessionCore core;
  net::steady_timer tick_timer;
  net::steady_timer pause_timer;
  std::weak_ptr<StreamConnection> stream;
  bool ticking = false;
};

struct TeleopServer::Impl {
  explicit Impl(ServerConfig c) : config(std::move(c)), acceptor(io) {}

  ServerConfig config;
  net::io_context io;
  tcp::acceptor acceptor;
  std::thread thread;
  std::atomic<std::uint16_t> bound_port{0};
  std::atomic<std::size_t> live_sessions{0};
  std::map<std::string, std::shared_ptr<LiveSession>> sessions;
  std::mt19937_64 id_rng{std::random_device{}()};
  std::atomic<bool> running{false};

  void accept();
  Response route(const Request &req);
  void open_stream(beast::tcp_stream stream, Request req);

  std::string new_session_id();
  void start_ticking(const std::shared_ptr<LiveSession> &session);
  void schedule_tick(const std::shared_ptr<LiveSession> &session);
  void pause(const std::shared_ptr<LiveSession> &session);
  void discard(const std::string &id);
  void sync_count() { live_sessions = sessions.size(); }
};

class StreamConnection : public std::enable_shared_from_this<StreamConnection> {
public:
  StreamConnection(TeleopServer::Impl &server, beast::tcp_stream stream,
                   std::shared_ptr<LiveSession> session)
      : server_(server), ws_(std::move(stream)), session_(std::move(session)) {}

  void run(Request req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) {
        self->on_closed();
        return;
      }
      self->on_open();
    });
  }

  void send(const json &msg) {
    outbox_.push_back(msg.dump());
    if (outbox_.size() == 1) {
      write_next();
    }
  }

  void close() {
    closing_ = true;
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
    beast::get_lowest_layer(ws_).close();
  }

private:
  void on_open() {
    session_->stream = weak_from_this();
    session_->pause_timer.cancel();
    if (session_->core.status() != SessionStatus::Finished) {
      session_->core.set_status(SessionStatus::Running);
      send(session_->core.state_message(0.0, false));
      server_.start_ticking(session_);
    }
    read_next();
  }

  void read_next() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->on_closed();
        return;
      }
      const auto text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->on_message(text);
      self->read_next();
    });
  }

  void on_message(const std::string &text) {
    auto &core = session_->core;
    try {
      const auto msg = parse_client_message(text);
      if (const auto *action = std::get_if<ActionMessage>(&msg)) {
        if (core.status() == SessionStatus::Finished) {
          throw SessionError("session already finished");
        }
        core.set_action(action->a);
      } else if (std::holds_alternative<ResetMessage>(msg)) {
        send(core.reset());
      } else {
        const auto path = core.finish(server_.config.data_dir);
        session_->tick_timer.cancel();
        session_->ticking = false;
        send({{"type", "saved"},
              {"path", path.string()},
              {"file", path.filename().string()},
              {"pairs", core.recorded_pairs()}});
      }
    } catch (const std::exception &e) {
      send({{"type", "error"}, {"message", e.what()}});
    }
  }

  void write_next() {
    ws_.text(true);
    ws_.async_write(net::buffer(outbox_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      if (ec) {
                        self->outbox_.clear();
                        return;
                      }
                      self->outbox_.pop_front();
                      if (!self->outbox_.empty()) {
                        self->write_next();
                      }
                    });
  }

  void on_closed() {
    if (closed_) {
      return;
    }
    closed_ = true;
    if (session_->stream.lock().get() == this || session_->stream.expired()) {
      session_->stream.reset();
      if (!closing_) {
        server_.pause(session_);
      }
    }
  }

  TeleopServer::Impl &server_;
  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  std::shared_ptr<LiveSession> session_;
  bool closed_ = false;
  bool closing_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
public:
  HttpConnection(TeleopServer::Impl &server, tcp::socket socket)
      : server_(server), stream_(std::move(socket)) {}

  void run() { read_next(); }

private:
  void read_next() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       if (ec) {
                         beast::error_code ignored;
                         self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                         return;
                       }
                       self->on_request();
                     });
  }

  void on_request() {
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      server_.open_stream(std::move(stream_), std::move(req_));
      return;
    }
    res_ = server_.route(req_);
    const bool keep_alive = res_.keep_alive();
    http::async_write(stream_, res_,
                      [self = shared_from_this(), keep_alive](beast::error_code ec, std::size_t) {
                        if (ec) {
                          return;
                        }
                        if (!keep_alive) {
                          beast::error_code ignored;
                          self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                          return;
                        }
                        self->read_next();
                      });
  }

  TeleopServer::Impl &server_;
  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  Request req_;
  Response res_;
};

std::string TeleopServer::Impl::new_session_id() {
  for (;;) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(id_rng()));
    if (!sessions.contains(buf)) {
      return buf;
    }
  }
}

void TeleopServer::Impl::accept() {
  acceptor.async_accept(net::make_strand(io), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) {
      if (ec != net::error::operation_aborted) {
        accept();
      }
      return;
    }
    std::make_shared<HttpConnection>(*this, std::move(socket))->run();
    accept();
  });
}

Response TeleopServer::Impl::route(const Request &req) {
  const auto parts = split_path(std::string_view(req.target().data(), req.target().size()));
  if (req.method() == http::verb::options) {
    Response res{http::status::no_content, req.version()};
    res.set(http::field::access_control_allow_origin, "*");
    res.set(http::field::access_control_allow_methods, "GET, POST, DELETE, OPTIONS");
    res.set(http::field::access_control_allow_headers, "Content-Type");
    res.keep_alive(req.keep_alive());
    res.prepare_payload();
    return res;
  }

  if (!parts.empty() && parts[0] == "session") {
    if (parts.size() == 1) {
      if (req.method() != http::verb::post) {
        return error_response(req, http::status::method_not_allowed, "use POST /session");
      }
      std::string env_id;
      try {
        const auto body = json::parse(req.body());
        env_id = body.at("env").get<std::string>();
      } catch (const json::exception &) {
        return error_response(req, http::status::bad_request,
                              "body must be a JSON object with a string 'env'");
      }
      try {
        auto id = new_session_id();
        SessionCore core(id, env_id, id_rng(), static_cast<int>(config.tick_period.count()));
        auto live = std::make_shared<LiveSession>(io, std::move(core));
        auto meta = live->core.metadata();
        sessions.emplace(id, std::move(live));
        sync_count();
        return json_response(req, http::status::created, meta);
      } catch (const UnknownEnv &e) {
        return error_response(req, http::status::not_found, e.what());
      } catch (const NotTeleoperable &e) {
        return error_response(req, http::status::bad_request, e.what());
      }
    }
    const auto it = sessions.find(parts[1]);
    if (parts.size() == 2) {
      if (it == sessions.end()) {
        return error_response(req, http::status::not_found, "no session '" + parts[1] + "'");
      }
      if (req.method() == http::verb::delete_) {
        discard(parts[1]);
        return json_response(req, http::status::ok, json{{"deleted", parts[1]}});
      }
      if (req.method() == http::verb::get) {
        auto meta = it->second->core.metadata();
        meta["recorded"] = it->second->core.recorded_pairs();
        return json_response(req, http::status::ok, meta);
      }
      return error_response(req, http::status::method_not_allowed, "use GET or DELETE");
    }
    if (parts.size() == 3 && parts[2] == "stream") {
      return error_response(req, http::status::upgrade_required,
                            "the stream endpoint needs a WebSocket upgrade");
    }
    return error_response(req, http::status::not_found, "no such endpoint");
  }

  if (req.method() != http::verb::get && req.method() != http::verb::head) {
    return error_response(req, http::status::method_not_allowed, "unsupported method");
  }
  std::optional<fs::path> file;
  if (!parts.empty() && parts[0] == "datasets" && parts.size() == 2) {
    file = resolve_under(config.data_dir, parts[1]);
  } else if (config.static_dir) {
    file = resolve_under(*config.static_dir, std::string(req.target().data(), req.target().size()));
  }
  if (!file) {
    return error_response(req, http::status::not_found, "not found");
  }
  auto body = read_file(*file);
  if (!body) {
    return error_response(req, http::status::not_found, "not found");
  }
  Response res{http::status::ok, req.version()};
  res.set(http::field::content_type, mime_type(*file));
  res.set(http::field::access_control_allow_origin, "*");
  res.keep_alive(req.keep_alive());
  res.body() = std::move(*body);
  res.prepare_payload();
  return res;
}

void TeleopServer::Impl::open_stream(beast::tcp_stream stream, Request req) {
  const auto parts = split_path(std::string_view(req.target().data(), req.target().size()));
  auto reject = [&](http::status status, const std::string &message) {
    auto res = std::make_shared<Response>(error_response(req, status, message));
    res->keep_alive(false);
    auto s = std::make_shared<beast::tcp_stream>(std::move(stream));
    http::async_write(*s, *res, [s, res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      s->socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  };
  if (parts.size() != 3 || parts[0] != "session" || parts[2] != "stream") {
    reject(http::status::not_found, "no such stream endpoint");
    return;
  }
  const auto it = sessions.find(parts[1]);
  if (it == sessions.end()) {
    reject(http::status::not_found, "no session '" + parts[1] + "'");
    return;
  }
  if (!it->second->stream.expired()) {
    reject(http::status::conflict, "session already has a connected stream");
    return;
  }
  std::make_shared<StreamConnection>(*this, std::move(stream), it->second)->run(std::move(req));
}

void TeleopServer::Impl::start_ticking(const std::shared_ptr<LiveSession> &session) {
  if (session->ticking) {
    return;
  }
  session->ticking = true;
  session->tick_timer.expires_after(config.tick_period);
  schedule_tick(session);
}

void TeleopServer::Impl::schedule_tick(const std::shared_ptr<LiveSession> &session) {
  session->tick_timer.async_wait(
      [this, weak = std::weak_ptr<LiveSession>(session)](beast::error_code ec) {
        auto s = weak.lock();
        if (ec || !s || !s->ticking) {
          return;
        }
        auto conn = s->stream.lock();
        if (!conn) {
          s->ticking = false;
          return;
        }
        conn->send(s->core.tick());
        // Fixed-rate schedule: the next deadline is relative to the last one.
        s->tick_timer.expires_at(s->tick_timer.expiry() + config.tick_period);
        schedule_tick(s);
      });
}

void TeleopServer::Impl::pause(const std::shared_ptr<LiveSession> &session) {
  session->ticking = false;
  session->tick_timer.cancel();
  if (session->core.status() != SessionStatus::Finished) {
    session->core.set_status(SessionStatus::Paused);
  }
  session->pause_timer.expires_after(config.pause_timeout);
  const std::string id = session->core.id();
  session->pause_timer.async_wait([this, id](beast::error_code ec) {
    if (ec) {
      return;
    }
    const auto it = sessions.find(id);
    if (it != sessions.end() && it->second->stream.expired()) {
      discard(id);
    }
  });
}

void TeleopServer::Impl::discard(const std::string &id) {
  const auto it = sessions.find(id);
  if (it == sessions.end()) {
    return;
  }
  auto session = it->second;
  sessions.erase(it);
  sync_count();
  session->ticking = false;
  session->tick_timer.cancel();
  session->pause_timer.cancel();
  if (auto conn = session->stream.lock()) {
    conn->close();
  }
}

TeleopServer::TeleopServer(ServerConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

TeleopServer::~TeleopServer() { stop(); }

void TeleopServer::start() {
  auto &d = *impl_;
  if (d.running) {
    return;
  }
  fs::create_directories(d.config.data_dir);
  const tcp::endpoint endpoint(net::ip::make_address(d.config.address), d.config.port);
  d.acceptor.open(endpoint.protocol());
  d.acceptor.set_option(net::socket_base::reuse_address(true));
  d.acceptor.bind(endpoint);
  d.acceptor.listen(net::socket_base::max_listen_connections);
  d.bound_port = d.acceptor.local_endpoint().port();
  d.accept();
  d.running = true;
  d.thread = std::thread([&d] { d.io.run(); });
}

void TeleopServer::wait() {
  if (impl_->thread.joinable()) {
    impl_->thread.join();
  }
}

void TeleopServer::stop() {
  auto &d = *impl_;
  if (!d.running.exchange(false)) {
    return;
  }
  net::post(d.io, [&d] {
    beast::error_code ec;
    d.acceptor.close(ec);
    std::vector<std::string> ids;
    for (const auto &[id, _] : d.sessions) {
      ids.push_back(id);
    }
    for (const auto &id : ids) {
      d.discard(id);
    }
    d.io.stop();
  });
  if (d.thread.joinable() && d.thread.get_id() != std::this_thread::get_id()) {
    d.thread.join();
  }
}

std::uint16_t TeleopServer::port() const { return impl_->bound_port; }

std::size_t TeleopServer::session_count() const { return impl_->live_sessions; }

} // namespace cbc::teleop
