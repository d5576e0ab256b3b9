#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "teleop/executor.hpp"
#include "teleop/protocol.hpp"
#include "teleop/world.hpp"

namespace teleop::server {

struct ServerConfig {
  std::string host{"127.0.0.1"};
  std::uint16_t port{0};  ///< 0 picks a free port
  protocol::LinkConfig link;
  std::uint64_t seed{0};
  bool realtime{true};    ///< pace the simulation at wall-clock speed
  std::string log_path;   ///< JSON Lines session log; empty disables it
  double noise_sigma{0.0};
};

/// Single-session endpoint. One thread does socket I/O, another ticks the
/// executor; they share state only through the link queues under one mutex.
/// A connection starting with "GET " is upgraded to a WebSocket, anything
/// else speaks length-prefixed frames.
class Server {
 public:
  Server(world::Workspace ws, ServerConfig cfg);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts both threads. Throws BindFailure.
  void start();
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  std::uint16_t port() const { return port_; }

  world::WorkspaceState snapshot() const;
  executor::ExecutorStatus status() const;
  bool connected() const;

 private:
  struct Connection;

  void io_loop();
  void tick_loop();
  double wall() const;
  void accept_client();
  void read_client();
  void flush_client();
  void drop_client();
  void write_all(int fd, const std::string& bytes);
  void log_line(const nlohmann::json& j);

  world::Workspace ws_;
  ServerConfig cfg_;
  mutable std::mutex mu_;
  executor::Executor ex_;
  std::unique_ptr<protocol::Session> session_;
  protocol::DelayLine<std::string> up_;
  protocol::DelayLine<std::string> down_;
  std::unique_ptr<Connection> conn_;
  std::ofstream log_;
  int listen_fd_{-1};
  int wake_[2]{-1, -1};
  std::uint16_t port_{0};
  std::atomic<bool> running_{false};
  std::thread io_thread_;
  std::thread tick_thread_;
  std::chrono::steady_clock::time_point epoch_;
};

/// Blocking length-prefixed client, for scripts and tests.
class Client {
 public:
  /// Throws ServerUnreachable when nothing accepts within the timeout.
  static Client connect(const std::string& host, std::uint16_t port, double timeout_s = 2.0);
  Client(Client&& other) noexcept;
  Client& operator=(Client&& other) noexcept;
  ~Client();

  void send(const nlohmann::json& msg);
  void send_raw(const std::string& bytes);
  /// Next message, or nullopt on timeout. Throws ServerUnreachable once the peer closed.
  std::optional<nlohmann::json> receive(double timeout_s);
  void close();

 private:
  explicit Client(int fd) : fd_(fd) {}
  int fd_{-1};
  protocol::FrameDecoder dec_;
};

}  // namespace teleop::server
