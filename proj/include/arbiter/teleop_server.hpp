#pragma once

// WebSocket front end for teleoperation sessions. One session per connection;
// all sessions share a single-threaded io_context, so each session is only
// ever touched by that thread.

#include "arbiter/teleop_session.hpp"

#include <memory>
#include <string>

namespace arbiter {

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  double tick_seconds = 0.05;
  SessionOptions session;
};

class TeleopServer {
 public:
  TeleopServer(const ModelSet& models, const WorldConfig& world, ServerOptions options);
  ~TeleopServer();

  /// Port actually bound (useful with port 0).
  unsigned short port() const;

  /// Serves until stop() is called. Blocks the calling thread.
  void run();
  /// Thread-safe.
  void stop();

  /// Total finished episodes across all connections (read after run returns).
  std::size_t finished_episodes() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace arbiter
