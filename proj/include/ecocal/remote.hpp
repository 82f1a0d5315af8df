#pragma once

// Remote control of one model instance over a line protocol.
//
// Commands are `\n`-terminated lines of space-separated tokens. Replies are
// `OK [payload]` or `ERR <code> <slug> [detail]` on one line, except EVENTS and
// FIT? whose OK is followed by payload lines and a lone `.`.
//
//   HELLO                      OK ecocal <version>
//   TAKE | RELEASE             acquire / give up control
//   LOAD <model-id>            instantiate a database, state at initial values
//   START                      run to the horizon in the background (resumes when paused,
//                              starts over after STOP or at the horizon)
//   PAUSE                      pause a background run; a second PAUSE resumes it
//   STOP                       end a background run
//   RESTART                    reset state, parameters keep their values
//   STEP <n>                   advance n steps
//   STATUS                     OK <idle|running|paused|stopped> <step>
//   GET [<model>.]<class>.<name>
//   SET [<model>.]<class>.<param> <value>
//   SPY ON|OFF
//   EVENTS                     drain traced messages: <I|U|C> <caller> <callee> <var> <value> <step>
//   FIT?                       fit of the run since the last reset against loaded observations
//   BYE
//
// Everything except HELLO, STATUS, GET, EVENTS, FIT?, TAKE, RELEASE and BYE needs control.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ecocal/error.hpp"
#include "ecocal/fitness.hpp"
#include "ecocal/fixtures.hpp"
#include "ecocal/kernel.hpp"
#include "ecocal/model_db.hpp"
#include "ecocal/text.hpp"

namespace ecocal::remote {

inline constexpr int kProtocolVersion = 1;

inline std::string format_message(const Message& m) {
  const char kind = m.kind == MessageKind::Inquiry ? 'I' : m.kind == MessageKind::Update ? 'U' : 'C';
  return std::string(1, kind) + " " + std::to_string(to_int(m.caller)) + " " + std::to_string(to_int(m.callee)) + " " +
         m.variable + " " + text::format_double(m.value) + " " + std::to_string(m.step);
}

enum class RunState { Idle, Running, Paused, Stopped };

inline std::string_view run_state_name(RunState s) {
  switch (s) {
    case RunState::Idle: return "idle";
    case RunState::Running: return "running";
    case RunState::Paused: return "paused";
    case RunState::Stopped: return "stopped";
  }
  return "idle";
}

/// Owns the single model instance. Remote sessions and the local API both go
/// through it, one command at a time.
class Desk {
 public:
  using SessionId = std::uint64_t;

  explicit Desk(std::vector<ModelDatabase> databases, BehaviorCatalog catalog = BehaviorCatalog::with_fixtures(),
                std::optional<ObservationSet> observations = std::nullopt)
      : databases_(std::move(databases)), catalog_(std::move(catalog)), observations_(std::move(observations)) {
    runner_ = std::thread([this] { run_loop(); });
  }

  Desk(const Desk&) = delete;
  Desk& operator=(const Desk&) = delete;

  ~Desk() {
    {
      std::lock_guard lk(mu_);
      shutdown_ = true;
    }
    cv_.notify_all();
    runner_.join();
  }

  SessionId open_session() {
    std::lock_guard lk(mu_);
    return next_session_++;
  }

  void close_session(SessionId id) {
    std::lock_guard lk(mu_);
    if (controller_ == id) controller_.reset();
  }

  /// Executes one command line; the reply carries its trailing newline(s).
  std::string handle(SessionId session, std::string_view line, bool* close = nullptr) {
    std::lock_guard lk(mu_);
    try {
      return dispatch(session, line, close);
    } catch (const Error& e) {
      return error_reply(e) + "\n";
    }
  }

  // ---- local API: reads always succeed, mutations fail while a remote session holds control ----

  bool remote_holds_control() const {
    std::lock_guard lk(mu_);
    return controller_.has_value();
  }

  double local_get(const VarId& id) const {
    std::lock_guard lk(mu_);
    return read(id.cls, id.name);
  }

  std::uint64_t local_step_index() const {
    std::lock_guard lk(mu_);
    return model_ ? model_->step_index() : 0;
  }

  void local_load(std::string_view id) {
    std::lock_guard lk(mu_);
    require_local();
    load(id);
  }

  void local_set_parameter(const ParamId& id, double value) {
    std::lock_guard lk(mu_);
    require_local();
    require_model().set_parameter(id, value);
  }

  void local_step(std::uint64_t n) {
    std::lock_guard lk(mu_);
    require_local();
    step_n(n);
  }

  void local_reset() {
    std::lock_guard lk(mu_);
    require_local();
    reset();
  }

  RunState run_state() const {
    std::lock_guard lk(mu_);
    return state_;
  }

 private:
  static std::string error_reply(const Error& e) {
    std::string detail = e.what();
    switch (e.code()) {
      case Errc::UnknownClass:
      case Errc::UnknownVariable:
      case Errc::UnknownParameter: return "ERR 404 unknown-name " + detail;
      case Errc::OutOfRange: return "ERR 422 out-of-range " + detail;
      case Errc::NumericalDivergence: return "ERR 422 divergence " + detail;
      case Errc::ControlHeld: return "ERR 409 control-held";
      case Errc::EmptyModel: return "ERR 409 no-model";
      default: return "ERR 400 malformed " + detail;
    }
  }

  static std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
  }

  void require_local() const {
    if (controller_) throw Error(Errc::ControlHeld, "a remote session holds control");
  }

  Model& require_model() {
    if (!model_) throw Error(Errc::EmptyModel, "no model loaded");
    return *model_;
  }
  const Model& require_model() const {
    if (!model_) throw Error(Errc::EmptyModel, "no model loaded");
    return *model_;
  }

  double read(std::string_view cls, std::string_view name) const {
    const auto& m = require_model();
    const auto code = m.code_of(cls);
    const auto& spec = m.spec(code);
    for (const auto& v : spec.variables)
      if (v.name == name) return m.value(code, name);
    return m.parameter(code, name);
  }

  void load(std::string_view id) {
    for (const auto& db : databases_) {
      if (db.id != id) continue;
      stop_runner();
      model_ = instantiate(db, catalog_);
      loaded_id_ = db.id;
      reset();
      return;
    }
    throw Error(Errc::UnknownClass, "model " + std::string(id));
  }

  void reset() {
    auto& m = require_model();
    stop_runner();
    state_ = RunState::Idle;
    m.reset();
    record_start();
  }

  void record_start() {
    recorded_ = Trajectory{};
    recorded_.clock = model_->clock();
    for (const auto& c : model_->classes())
      for (const auto& v : c.variables) recorded_.keys.push_back({c.code, c.name, v.name});
    recorded_.series.assign(recorded_.keys.size(), {});
    record_sample();
  }

  void record_sample() {
    recorded_.step_indices.push_back(model_->step_index());
    for (std::size_t i = 0; i < recorded_.keys.size(); ++i)
      recorded_.series[i].push_back(model_->value(recorded_.keys[i].code, recorded_.keys[i].var));
  }

  void step_once() {
    model_->step();
    record_sample();
  }

  void step_n(std::uint64_t n) {
    require_model();
    if (state_ == RunState::Running) throw Error(Errc::ControlHeld, "a background run is active");
    for (std::uint64_t i = 0; i < n; ++i) step_once();
  }

  void stop_runner() {
    if (state_ == RunState::Running || state_ == RunState::Paused) state_ = RunState::Stopped;
  }

  void run_loop() {
    std::unique_lock lk(mu_);
    while (true) {
      cv_.wait(lk, [&] { return shutdown_ || state_ == RunState::Running; });
      if (shutdown_) return;
      try {
        if (model_->step_index() >= model_->clock().steps()) {
          state_ = RunState::Idle;
          continue;
        }
        step_once();
      } catch (const Error&) {
        state_ = RunState::Stopped;
      }
      // Let commands interleave between steps.
      lk.unlock();
      std::this_thread::yield();
      lk.lock();
    }
  }

  std::pair<std::string, std::string> qualified(std::string_view token) const {
    auto parts = text::split(token, '.');
    if (parts.size() == 3) {
      if (parts[0] != loaded_id_) throw Error(Errc::UnknownClass, "model " + std::string(parts[0]));
      return {std::string(parts[1]), std::string(parts[2])};
    }
    if (parts.size() != 2 || parts[0].empty() || parts[1].empty())
      throw Error(Errc::InvalidSpec, "expected [<model>.]<class>.<name>");
    return {std::string(parts[0]), std::string(parts[1])};
  }

  std::string dispatch(SessionId session, std::string_view line, bool* close) {
    auto tok = text::split_ws(text::trim(line));
    if (tok.empty()) throw Error(Errc::InvalidSpec, "empty command");
    const auto verb = upper(tok[0]);
    auto args = [&](std::size_t n) {
      if (tok.size() != n + 1) throw Error(Errc::InvalidSpec, verb + " takes " + std::to_string(n) + " argument(s)");
    };

    if (verb == "HELLO") {
      args(0);
      return "OK ecocal " + std::to_string(kProtocolVersion) + "\n";
    }
    if (verb == "BYE") {
      args(0);
      if (controller_ == session) controller_.reset();
      if (close) *close = true;
      return "OK bye\n";
    }
    if (verb == "TAKE") {
      args(0);
      if (controller_ && controller_ != session) return "ERR 409 control-held\n";
      controller_ = session;
      return "OK\n";
    }
    if (verb == "RELEASE") {
      args(0);
      if (controller_ != session) return "ERR 409 no-control\n";
      controller_.reset();
      return "OK\n";
    }
    if (verb == "STATUS") {
      args(0);
      return "OK " + std::string(run_state_name(state_)) + " " +
             std::to_string(model_ ? model_->step_index() : 0) + "\n";
    }
    if (verb == "GET") {
      args(1);
      auto [cls, name] = qualified(tok[1]);
      return "OK " + text::format_double(read(cls, name)) + "\n";
    }
    if (verb == "EVENTS") {
      args(0);
      std::string out = "OK\n";
      if (model_)
        for (const auto& m : model_->drain_trace()) out += format_message(m) + "\n";
      return out + ".\n";
    }
    if (verb == "FIT?") {
      args(0);
      if (!observations_) throw Error(Errc::NoObservations, "no observations loaded");
      require_model();
      std::vector<VarId> targets;
      for (const auto& v : observations_->variables()) targets.push_back(v);
      const auto rep = evaluate(recorded_, *observations_, targets);
      std::string out = "OK\n";
      out += "aggregate_lof " + text::format_double(rep.aggregate_lof) + "\n";
      out += "adequacy " + text::format_double(rep.adequacy) + "\n";
      out += "reliability " + text::format_double(rep.reliability) + "\n";
      out += "matched " + std::to_string(rep.matched) + "\n";
      out += "total " + std::to_string(rep.total) + "\n";
      for (const auto& [k, v] : rep.per_variable_lof) out += "lof " + k.str() + " " + text::format_double(v) + "\n";
      return out + ".\n";
    }

    // Mutating verbs from here on.
    if (verb != "LOAD" && verb != "START" && verb != "STOP" && verb != "PAUSE" && verb != "RESTART" &&
        verb != "STEP" && verb != "SET" && verb != "SPY")
      throw Error(Errc::InvalidSpec, "unknown verb " + std::string(tok[0]));
    if (controller_ != session) return controller_ ? "ERR 409 control-held\n" : "ERR 409 no-control\n";

    if (verb == "LOAD") {
      args(1);
      load(tok[1]);
      return "OK\n";
    }
    auto& m = require_model();
    if (verb == "START") {
      args(0);
      if (state_ == RunState::Stopped || (state_ == RunState::Idle && m.step_index() >= m.clock().steps())) reset();
      state_ = RunState::Running;
      cv_.notify_all();
      return "OK\n";
    }
    if (verb == "PAUSE") {
      args(0);
      if (state_ == RunState::Running) state_ = RunState::Paused;
      else if (state_ == RunState::Paused) {
        state_ = RunState::Running;
        cv_.notify_all();
      } else {
        throw Error(Errc::InvalidSpec, "nothing to pause");
      }
      return "OK\n";
    }
    if (verb == "STOP") {
      args(0);
      stop_runner();
      return "OK\n";
    }
    if (verb == "RESTART") {
      args(0);
      reset();
      return "OK\n";
    }
    if (verb == "STEP") {
      args(1);
      auto n = text::parse_int<std::uint64_t>(tok[1]);
      if (!n || *n == 0) throw Error(Errc::InvalidSpec, "STEP needs a positive integer");
      if (state_ == RunState::Running) return "ERR 409 running\n";
      step_n(*n);
      return "OK " + std::to_string(m.step_index()) + "\n";
    }
    if (verb == "SET") {
      args(2);
      auto [cls, name] = qualified(tok[1]);
      auto v = text::parse_double(tok[2]);
      if (!v) throw Error(Errc::InvalidSpec, "bad number '" + std::string(tok[2]) + "'");
      m.set_parameter(m.code_of(cls), name, *v);
      return "OK\n";
    }
    // SPY
    args(1);
    const auto mode = upper(tok[1]);
    if (mode != "ON" && mode != "OFF") throw Error(Errc::InvalidSpec, "SPY ON|OFF");
    m.set_spy(mode == "ON");
    return "OK\n";
  }

  std::vector<ModelDatabase> databases_;
  BehaviorCatalog catalog_;
  std::optional<ObservationSet> observations_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::thread runner_;
  bool shutdown_ = false;
  RunState state_ = RunState::Idle;
  std::optional<Model> model_;
  std::string loaded_id_;
  Trajectory recorded_;
  std::optional<SessionId> controller_;
  SessionId next_session_ = 1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// Parses `host:port`, `:port` or `port`.
inline Endpoint parse_endpoint(std::string_view s) {
  Endpoint e;
  auto colon = s.rfind(':');
  std::string_view port = s;
  if (colon != std::string_view::npos) {
    if (colon > 0) e.host = std::string(s.substr(0, colon));
    port = s.substr(colon + 1);
  }
  auto p = text::parse_int<std::uint16_t>(port);
  if (!p) throw Error(Errc::InvalidSpec, "bad endpoint '" + std::string(s) + "'");
  e.port = *p;
  return e;
}

namespace detail {

inline bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

/// Buffered line reader over a socket.
class LineReader {
 public:
  explicit LineReader(int fd) : fd_(fd) {}

  std::optional<std::string> next() {
    while (true) {
      auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      char chunk[4096];
      auto n = ::recv(fd_, chunk, sizeof(chunk), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return std::nullopt;
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  std::string buf_;
};

}  // namespace detail

/// TCP front end: one thread per connection, all commands serialised by the Desk.
class Server {
 public:
  Server(Desk& desk, const Endpoint& endpoint) : desk_(desk) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(Errc::BindFailure, std::strerror(errno));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(endpoint.port);
    if (::inet_pton(AF_INET, endpoint.host == "localhost" ? "127.0.0.1" : endpoint.host.c_str(), &addr.sin_addr) != 1) {
      ::close(listen_fd_);
      throw Error(Errc::BindFailure, "bad address " + endpoint.host);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd_, 16) != 0) {
      const std::string why = std::strerror(errno);
      ::close(listen_fd_);
      throw Error(Errc::BindFailure, endpoint.host + ":" + std::to_string(endpoint.port) + ": " + why);
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  ~Server() { stop(); }

  std::uint16_t port() const noexcept { return port_; }

  /// Accepts connections until stop() is called.
  void serve() {
    while (!stopping_) {
      pollfd p{listen_fd_, POLLIN, 0};
      int r = ::poll(&p, 1, 100);
      if (r <= 0) continue;
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      std::lock_guard lk(mu_);
      if (stopping_) {
        ::close(fd);
        break;
      }
      clients_.push_back(fd);
      workers_.emplace_back([this, fd] { session(fd); });
    }
  }

  void start() {
    acceptor_ = std::thread([this] { serve(); });
  }

  /// Stops accepting, closes every open session and joins all threads.
  void stop() {
    if (stopped_.exchange(true)) return;
    stopping_ = true;
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> workers;
    {
      std::lock_guard lk(mu_);
      for (int fd : clients_) ::shutdown(fd, SHUT_RDWR);
      workers.swap(workers_);
    }
    for (auto& t : workers) t.join();
    ::close(listen_fd_);
  }

 private:
  void session(int fd) {
    const auto id = desk_.open_session();
    detail::LineReader reader(fd);
    while (auto line = reader.next()) {
      if (text::trim(*line).empty()) continue;
      bool close = false;
      if (!detail::send_all(fd, desk_.handle(id, *line, &close)) || close) break;
    }
    desk_.close_session(id);
    std::lock_guard lk(mu_);
    ::shutdown(fd, SHUT_RDWR);
    ::close(fd);
    clients_.erase(std::remove(clients_.begin(), clients_.end(), fd), clients_.end());
  }

  Desk& desk_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> stopped_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<int> clients_;
  std::vector<std::thread> workers_;
};

struct Reply {
  bool ok = false;
  std::string head;                  // first line
  std::vector<std::string> payload;  // lines between OK and `.`
};

/// Blocking client used by tests and scripted controllers.
class Client {
 public:
  explicit Client(const Endpoint& endpoint) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const auto port = std::to_string(endpoint.port);
    if (::getaddrinfo(endpoint.host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
      throw Error(Errc::StorageFailure, "cannot resolve " + endpoint.host);
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const bool ok = fd_ >= 0 && ::connect(fd_, res->ai_addr, res->ai_addrlen) == 0;
    ::freeaddrinfo(res);
    if (!ok) {
      if (fd_ >= 0) ::close(fd_);
      throw Error(Errc::StorageFailure, "cannot connect to " + endpoint.host + ":" + port);
    }
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    reader_ = std::make_unique<detail::LineReader>(fd_);
  }

  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;
  ~Client() {
    if (fd_ >= 0) ::close(fd_);
  }

  Reply send(std::string_view command) {
    if (!detail::send_all(fd_, std::string(command) + "\n")) throw Error(Errc::StorageFailure, "connection lost");
    Reply r;
    auto head = reader_->next();
    if (!head) throw Error(Errc::StorageFailure, "connection closed");
    r.head = *head;
    r.ok = r.head.rfind("OK", 0) == 0;
    auto tok = text::split_ws(command);
    std::string verb = tok.empty() ? "" : std::string(tok[0]);
    for (auto& c : verb) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (r.ok && (verb == "EVENTS" || verb == "FIT?")) {
      while (auto line = reader_->next()) {
        if (*line == ".") return r;
        r.payload.push_back(*line);
      }
      throw Error(Errc::StorageFailure, "connection closed mid-reply");
    }
    return r;
  }

  /// True once the server has closed the connection.
  bool closed_by_peer() {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, 1000) <= 0) return false;
    char c;
    return ::recv(fd_, &c, 1, MSG_PEEK) == 0;
  }

 private:
  int fd_ = -1;
  std::unique_ptr<detail::LineReader> reader_;
};

}  // namespace ecocal::remote
