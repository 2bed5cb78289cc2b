#pragma once

// Episode log: a header record followed by one record per environment step.
// Serialized as JSON lines; several episodes may share one file.

#include "arbiter/env.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace arbiter {

enum class ControlMode { Direct, SharedBaseline, SharedLearned };
const char* to_string(ControlMode m);
ControlMode control_mode_from_string(std::string_view s);

enum class Outcome { Success, Truncated, Aborted };
const char* to_string(Outcome o);

struct StateSnapshot {
  int t = 0;
  Vec2 gripper_pos{0.0, 0.0};
  Vec2 gripper_vel{0.0, 0.0};
  std::optional<int> grabbed;
  Phase phase = Phase::Reach;

  static StateSnapshot of(const WorldState& s);
};

// One control step. `state` is the state the decision was taken in.
struct StepRecord {
  StateSnapshot state;
  Vec2 a_u{0.0, 0.0};
  Vec2 a_r{0.0, 0.0};
  Vec2 a_s{0.0, 0.0};
  double alpha = 0.0;
  double confidence = 0.0;
  std::vector<double> windowed_scores;
  int g_star = -1;  // -1 when no intent model ran
  bool grabbed = false;
};

struct EpisodeHeader {
  int episode_id = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
  ControlMode mode = ControlMode::Direct;
  std::optional<int> true_goal;
  Outcome outcome = Outcome::Truncated;
  int steps = 0;
  std::vector<Circle> obstacles;
  std::string source = "sim";  // "sim" or "live"
};

struct Episode {
  EpisodeHeader header;
  std::vector<StepRecord> steps;

  bool success() const { return header.outcome == Outcome::Success; }
};

/// Rebuilds the full world state a record was taken in.
WorldState reconstruct_state(const StateSnapshot& snap, const EpisodeHeader& header, const WorldConfig& cfg);

std::string to_jsonl(const Episode& ep);
std::string to_jsonl(std::span<const Episode> eps);
/// Throws FormatError on malformed input (bad JSON, step before header,
/// step count disagreeing with the header).
std::vector<Episode> parse_episodes(std::string_view text);

void write_episodes(const std::filesystem::path& path, std::span<const Episode> eps);
std::vector<Episode> read_episodes(const std::filesystem::path& path);

}  // namespace arbiter
