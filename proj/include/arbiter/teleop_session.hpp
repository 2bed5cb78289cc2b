#pragma once

// Transport-independent teleoperation session. Inbound protocol messages are
// validated on arrival and queued; tick() drains the queue, runs one
// shared-control step in logical time and returns the outbound messages.
//
// client -> server: hello, user_cmd, set_mode, reset
// server -> client: config, ack, state, episode_end, error

#include "arbiter/controller.hpp"

#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace arbiter {

inline constexpr int kProtocolVersion = 1;

struct SessionOptions {
  ControlMode mode = ControlMode::SharedLearned;
  BlendMode blend = BlendMode::Rotational;
  int heatmap_every = 5;       // 0 disables heatmaps
  double stale_after = 0.25;   // seconds without a command before a_u = 0
  std::optional<std::filesystem::path> record_dir;
  std::uint64_t seed = 0;      // episode k is reset with seed + k
};

class Session {
 public:
  Session(std::string id, const ModelSet& models, const WorldConfig& world, SessionOptions options);

  /// Validates and queues one text frame received at wall time `now`
  /// (seconds). Returns immediate replies (config, ack or error).
  std::vector<json> handle_message(std::string_view text, double now);

  /// Applies queued messages, advances the world by one dt unless the episode
  /// has ended, and returns the outbound messages.
  std::vector<json> tick(double now);

  const std::string& id() const { return id_; }
  const WorldState& state() const { return state_; }
  ControlMode mode() const { return mode_; }
  bool episode_over() const { return over_; }
  const Episode& current_episode() const { return episode_; }
  /// Episodes that have ended (completed, truncated or aborted), in order.
  const std::vector<Episode>& finished_episodes() const { return finished_; }
  std::uint64_t ticks() const { return ticks_; }

 private:
  struct Pending {
    enum class Kind { Command, SetMode, Reset } kind;
    Vec2 v{0.0, 0.0};
    double received = 0.0;
    ControlMode mode = ControlMode::Direct;
  };

  void start_episode();
  void finish_episode(Outcome outcome, std::vector<json>& out);
  json config_message() const;
  json state_message(const std::optional<Decision>& d) const;

  std::string id_;
  const ModelSet* models_;
  WorldConfig world_;
  SessionOptions options_;
  ControlMode mode_;
  ControlMode next_mode_;
  SharedController controller_;
  WorldState state_;
  Episode episode_;
  std::vector<Episode> finished_;
  std::deque<Pending> inbox_;
  std::optional<Vec2> command_;
  double command_time_ = 0.0;
  bool over_ = false;
  int episode_index_ = 0;
  std::uint64_t ticks_ = 0;
};

}  // namespace arbiter
