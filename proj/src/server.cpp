#include "teleop/server.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

#include "teleop/error.hpp"
#include "teleop/websocket.hpp"

namespace teleop::server {

using nlohmann::json;

namespace {

constexpr int kPollMs = 5;
constexpr double kSniffGrace = 0.2;  // a silent client is assumed to speak framed JSON after this

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

bool send_fully(int fd, const std::string& bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n > 0) {
      off += static_cast<std::size_t>(n);
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      pollfd p{fd, POLLOUT, 0};
      if (::poll(&p, 1, 1000) <= 0) return false;
      continue;
    }
    return false;
  }
  return true;
}

std::string busy_frame() {
  protocol::Reply r;
  r.error = ErrorCode::Busy;
  r.message = "another operator session is active";
  return protocol::encode_frame(protocol::to_json(r).dump());
}

}  // namespace

struct Server::Connection {
  enum class Kind { Unknown, Framed, WebSocket };
  int fd{-1};
  Kind kind{Kind::Unknown};
  double opened{0.0};
  std::string head;  ///< bytes before the transport is known
  protocol::FrameDecoder frames;
  ws::Decoder ws;
};

Server::Server(world::Workspace ws, ServerConfig cfg)
    : ws_(std::move(ws)),
      cfg_(std::move(cfg)),
      ex_(ws_, ws_.initial),
      up_(cfg_.link.delay_s(), cfg_.link.jitter_s(), cfg_.seed),
      down_(cfg_.link.delay_s(), cfg_.link.jitter_s(), cfg_.seed + 1) {
  cfg_.link.validate();
}

Server::~Server() { stop(); }

double Server::wall() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_).count();
}

void Server::start() {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(cfg_.port);
  if (::getaddrinfo(cfg_.host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
    throw Error(ErrorCode::BindFailure, "cannot resolve " + cfg_.host);
  int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (fd < 0 || ::bind(fd, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd, 4) != 0) {
    std::string why = std::strerror(errno);
    ::freeaddrinfo(res);
    if (fd >= 0) ::close(fd);
    throw Error(ErrorCode::BindFailure, "cannot listen on " + cfg_.host + ":" + port + ": " + why);
  }
  ::freeaddrinfo(res);
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
  set_nonblocking(fd);
  listen_fd_ = fd;
  if (::pipe(wake_) != 0) throw Error(ErrorCode::BindFailure, "cannot create wake pipe");
  set_nonblocking(wake_[0]);
  set_nonblocking(wake_[1]);

  if (!cfg_.log_path.empty()) {
    log_.open(cfg_.log_path, std::ios::out | std::ios::trunc);
    if (!log_) throw Error(ErrorCode::BindFailure, "cannot open session log " + cfg_.log_path);
  }
  epoch_ = std::chrono::steady_clock::now();
  running_ = true;
  io_thread_ = std::thread([this] { io_loop(); });
  tick_thread_ = std::thread([this] { tick_loop(); });
}

void Server::stop() {
  if (running_.exchange(false)) {
    char c = 0;
    [[maybe_unused]] auto n = ::write(wake_[1], &c, 1);
  }
  if (io_thread_.joinable()) io_thread_.join();
  if (tick_thread_.joinable()) tick_thread_.join();
  {
    std::lock_guard lock(mu_);
    if (conn_) {
      ::close(conn_->fd);
      conn_.reset();
    }
    for (const auto& e : ex_.close()) log_line(protocol::log_record(wall(), ex_.sim_time(), e));
  }
  for (int* fd : {&listen_fd_, &wake_[0], &wake_[1]}) {
    if (*fd >= 0) ::close(*fd);
    *fd = -1;
  }
}

void Server::wait() {
  while (running_) std::this_thread::sleep_for(std::chrono::milliseconds(20));
}

world::WorkspaceState Server::snapshot() const {
  std::lock_guard lock(mu_);
  return ex_.state();
}

executor::ExecutorStatus Server::status() const {
  std::lock_guard lock(mu_);
  return ex_.status();
}

bool Server::connected() const {
  std::lock_guard lock(mu_);
  return conn_ != nullptr;
}

void Server::log_line(const json& j) {
  if (log_.is_open()) log_ << j.dump() << '\n' << std::flush;
}

void Server::io_loop() {
  while (running_) {
    pollfd fds[3];
    nfds_t n = 0;
    fds[n++] = {listen_fd_, POLLIN, 0};
    fds[n++] = {wake_[0], POLLIN, 0};
    int client_fd = -1;
    {
      std::lock_guard lock(mu_);
      if (conn_) client_fd = conn_->fd;
    }
    if (client_fd >= 0) fds[n++] = {client_fd, POLLIN, 0};
    ::poll(fds, n, kPollMs);
    if (!running_) break;
    if (fds[1].revents & POLLIN) {
      char drain[256];
      while (::read(wake_[0], drain, sizeof drain) > 0) {
      }
    }
    if (fds[0].revents & POLLIN) accept_client();
    if (client_fd >= 0 && (fds[2].revents & (POLLIN | POLLHUP | POLLERR))) read_client();
    flush_client();
  }
}

void Server::accept_client() {
  while (true) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) return;
    std::lock_guard lock(mu_);
    if (conn_) {
      send_fully(fd, busy_frame());
      ::close(fd);
      continue;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    set_nonblocking(fd);
    conn_ = std::make_unique<Connection>();
    conn_->fd = fd;
    conn_->opened = wall();
    session_ = std::make_unique<protocol::Session>(ex_, protocol::SessionConfig{cfg_.noise_sigma, cfg_.seed});
    up_.clear();
    down_.clear();
    log_line({{"wall_time", wall()}, {"sim_time", ex_.sim_time()}, {"session", "connected"}});
  }
}

void Server::drop_client() {
  if (!conn_) return;
  ::close(conn_->fd);
  conn_.reset();
  session_.reset();
  up_.clear();
  down_.clear();
  log_line({{"wall_time", wall()}, {"sim_time", ex_.sim_time()}, {"session", "disconnected"}});
}

void Server::read_client() {
  char buf[65536];
  std::lock_guard lock(mu_);
  if (!conn_) return;
  Connection& c = *conn_;
  while (true) {
    ssize_t n = ::recv(c.fd, buf, sizeof buf, 0);
    if (n == 0 || (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)) {
      drop_client();
      return;
    }
    if (n < 0) break;
    std::string_view bytes(buf, static_cast<std::size_t>(n));
    try {
      if (c.kind == Connection::Kind::Unknown) {
        c.head.append(bytes);
        if (c.head.size() < 4) continue;
        if (c.head.compare(0, 4, "GET ") != 0) {
          c.kind = Connection::Kind::Framed;
          c.frames.feed(c.head);
        } else {
          ws::HttpRequest req;
          auto used = ws::parse_request(c.head, req);
          if (!used) continue;
          send_fully(c.fd, ws::handshake_response(req));
          c.kind = Connection::Kind::WebSocket;
          c.ws.feed(std::string_view(c.head).substr(*used));
        }
        c.head.clear();
      } else if (c.kind == Connection::Kind::Framed) {
        c.frames.feed(bytes);
      } else {
        c.ws.feed(bytes);
      }

      const double now = wall();
      if (c.kind == Connection::Kind::Framed) {
        while (auto p = c.frames.next()) up_.send(now, std::move(*p));
      } else if (c.kind == Connection::Kind::WebSocket) {
        while (auto m = c.ws.next()) {
          if (m->opcode == ws::Opcode::Close) {
            send_fully(c.fd, ws::encode(m->payload.substr(0, 2), ws::Opcode::Close));
            drop_client();
            return;
          }
          if (m->opcode == ws::Opcode::Ping) {
            send_fully(c.fd, ws::encode(m->payload, ws::Opcode::Pong));
            continue;
          }
          if (m->opcode == ws::Opcode::Text || m->opcode == ws::Opcode::Binary) up_.send(now, std::move(m->payload));
        }
      }
    } catch (const Error&) {
      // Unrecoverable framing error: the stream cannot be resynchronised.
      drop_client();
      return;
    }
  }
}

void Server::flush_client() {
  std::lock_guard lock(mu_);
  if (!conn_) return;
  if (conn_->kind == Connection::Kind::Unknown) {
    if (!conn_->head.empty() || wall() - conn_->opened < kSniffGrace) return;
    conn_->kind = Connection::Kind::Framed;
  }
  for (const auto& msg : down_.receive(wall())) {
    std::string bytes = conn_->kind == Connection::Kind::WebSocket ? ws::encode(msg) : protocol::encode_frame(msg);
    if (!send_fully(conn_->fd, bytes)) {
      drop_client();
      return;
    }
  }
}

void Server::tick_loop() {
  const double dt = ws_.physics.tick_dt;
  const double state_period = 1.0 / cfg_.link.state_rate;
  double next_state = 0.0;
  double paced = 0.0;  // wall time at which the next tick is due
  while (running_) {
    bool busy = false;
    {
      std::lock_guard lock(mu_);
      const double now = wall();
      for (auto& payload : up_.receive(now)) {
        if (!session_) break;
        json j;
        protocol::Reply r;
        try {
          j = json::parse(payload);
          r = session_->handle_json(j);
        } catch (const json::parse_error& e) {
          r.error = ErrorCode::MalformedMessage;
          r.message = e.what();
        }
        down_.send(now, protocol::to_json(r).dump());
        json rec{{"wall_time", now}, {"sim_time", ex_.sim_time()}, {"command", j}, {"reply", protocol::to_json(r)}};
        rec["reply"].erase("v");
        rec["reply"].erase("type");
        log_line(rec);
      }

      auto events = ex_.run_tick();
      for (const auto& e : events) {
        log_line(protocol::log_record(now, ex_.sim_time(), e));
        if (session_) down_.send(now, protocol::to_json(protocol::ServerMsg{e}).dump());
      }
      if (session_) {
        session_->observe(events);
        if (now >= next_state) {
          down_.send(now, protocol::to_json(protocol::ServerMsg{session_->state()}).dump());
          next_state = now + state_period;
        }
      }
      busy = ex_.busy() || ex_.state().ee_target.has_value();
    }
    char c = 0;
    [[maybe_unused]] auto w = ::write(wake_[1], &c, 1);  // let the I/O thread flush promptly

    if (!cfg_.realtime && busy) {
      paced = wall();
      continue;
    }
    paced = std::max(paced + dt, wall() - 0.1);  // never try to catch up more than 0.1 s
    double wait = paced - wall();
    if (wait > 0) std::this_thread::sleep_for(std::chrono::duration<double>(wait));
  }
}

// Client

Client Client::connect(const std::string& host, std::uint16_t port, double timeout_s) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
    throw Error(ErrorCode::ServerUnreachable, "cannot resolve " + host);
  while (true) {
    int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd >= 0 && ::connect(fd, res->ai_addr, res->ai_addrlen) == 0) {
      ::freeaddrinfo(res);
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return Client(fd);
    }
    if (fd >= 0) ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  ::freeaddrinfo(res);
  throw Error(ErrorCode::ServerUnreachable, "no server at " + host + ":" + std::to_string(port));
}

Client::Client(Client&& other) noexcept : fd_(other.fd_), dec_(std::move(other.dec_)) { other.fd_ = -1; }

Client& Client::operator=(Client&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    dec_ = std::move(other.dec_);
    other.fd_ = -1;
  }
  return *this;
}

Client::~Client() { close(); }

void Client::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Client::send(const json& msg) { send_raw(protocol::encode_frame(msg.dump())); }

void Client::send_raw(const std::string& bytes) {
  if (fd_ < 0 || !send_fully(fd_, bytes)) throw Error(ErrorCode::ServerUnreachable, "connection closed");
}

std::optional<json> Client::receive(double timeout_s) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  while (true) {
    if (auto p = dec_.next()) return json::parse(*p);
    if (fd_ < 0) throw Error(ErrorCode::ServerUnreachable, "connection closed");
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) continue;
    char buf[65536];
    ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n <= 0) {
      close();
      throw Error(ErrorCode::ServerUnreachable, "server closed the connection");
    }
    dec_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
  }
}

}  // namespace teleop::server
