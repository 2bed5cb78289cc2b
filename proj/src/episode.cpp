#include "arbiter/episode.hpp"

#include <sstream>

namespace arbiter {

const char* to_string(ControlMode m) {
  switch (m) {
    case ControlMode::Direct: return "direct";
    case ControlMode::SharedBaseline: return "shared_baseline";
    case ControlMode::SharedLearned: return "shared_learned";
  }
  return "?";
}

ControlMode control_mode_from_string(std::string_view s) {
  if (s == "direct") return ControlMode::Direct;
  if (s == "shared_baseline") return ControlMode::SharedBaseline;
  if (s == "shared_learned") return ControlMode::SharedLearned;
  throw ConfigError("unknown control mode '" + std::string(s) + "'");
}

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Success: return "success";
    case Outcome::Truncated: return "truncated";
    case Outcome::Aborted: return "aborted";
  }
  return "?";
}

namespace {

Outcome outcome_from_string(std::string_view s) {
  if (s == "success") return Outcome::Success;
  if (s == "truncated") return Outcome::Truncated;
  if (s == "aborted") return Outcome::Aborted;
  throw FormatError("unknown outcome '" + std::string(s) + "'");
}

json optional_int(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

std::optional<int> read_optional_int(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<int>();
}

json header_json(const EpisodeHeader& h) {
  json obstacles = json::array();
  for (const auto& c : h.obstacles) obstacles.push_back(json::array({c.center.x(), c.center.y(), c.radius}));
  return {{"record", "header"},
          {"episode_id", h.episode_id},
          {"config_hash", h.config_hash},
          {"seed", h.seed},
          {"mode", to_string(h.mode)},
          {"true_goal", optional_int(h.true_goal)},
          {"outcome", to_string(h.outcome)},
          {"steps", h.steps},
          {"obstacles", obstacles},
          {"source", h.source}};
}

json step_json(const StepRecord& r) {
  return {{"record", "step"},
          {"t", r.state.t},
          {"pos", to_json(r.state.gripper_pos)},
          {"vel", to_json(r.state.gripper_vel)},
          {"state_grabbed", optional_int(r.state.grabbed)},
          {"phase", to_string(r.state.phase)},
          {"a_u", to_json(r.a_u)},
          {"a_r", to_json(r.a_r)},
          {"a_s", to_json(r.a_s)},
          {"alpha", r.alpha},
          {"confidence", r.confidence},
          {"scores", r.windowed_scores},
          {"g_star", r.g_star},
          {"grabbed", r.grabbed}};
}

EpisodeHeader parse_header(const json& j) {
  EpisodeHeader h;
  h.episode_id = j.at("episode_id").get<int>();
  h.config_hash = j.at("config_hash").get<std::string>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.mode = control_mode_from_string(j.at("mode").get<std::string>());
  h.true_goal = read_optional_int(j.at("true_goal"));
  h.outcome = outcome_from_string(j.at("outcome").get<std::string>());
  h.steps = j.at("steps").get<int>();
  for (const auto& c : j.at("obstacles")) h.obstacles.push_back({Vec2{c.at(0).get<double>(), c.at(1).get<double>()}, c.at(2).get<double>()});
  h.source = j.value("source", "sim");
  return h;
}

StepRecord parse_step(const json& j) {
  StepRecord r;
  r.state.t = j.at("t").get<int>();
  r.state.gripper_pos = vec2_from_json(j.at("pos"));
  r.state.gripper_vel = vec2_from_json(j.at("vel"));
  r.state.grabbed = read_optional_int(j.at("state_grabbed"));
  r.state.phase = phase_from_string(j.at("phase").get<std::string>());
  r.a_u = vec2_from_json(j.at("a_u"));
  r.a_r = vec2_from_json(j.at("a_r"));
  r.a_s = vec2_from_json(j.at("a_s"));
  r.alpha = j.at("alpha").get<double>();
  r.confidence = j.at("confidence").get<double>();
  r.windowed_scores = j.at("scores").get<std::vector<double>>();
  r.g_star = j.at("g_star").get<int>();
  r.grabbed = j.at("grabbed").get<bool>();
  return r;
}

}  // namespace

StateSnapshot StateSnapshot::of(const WorldState& s) { return {s.t, s.gripper_pos, s.gripper_vel, s.grabbed, s.phase}; }

WorldState reconstruct_state(const StateSnapshot& snap, const EpisodeHeader& header, const WorldConfig& cfg) {
  WorldState s;
  s.t = snap.t;
  s.gripper_pos = snap.gripper_pos;
  s.gripper_vel = snap.gripper_vel;
  s.grabbed = snap.grabbed;
  s.phase = snap.phase;
  for (const auto& o : cfg.goal_objects) s.object_positions.push_back(o.center);
  if (snap.grabbed && *snap.grabbed >= 0 && *snap.grabbed < cfg.num_goals())
    s.object_positions[static_cast<std::size_t>(*snap.grabbed)] = snap.gripper_pos;
  s.obstacles = header.obstacles;
  return s;
}

std::string to_jsonl(const Episode& ep) {
  std::string out = header_json(ep.header).dump();
  out += '\n';
  for (const auto& r : ep.steps) {
    out += step_json(r).dump();
    out += '\n';
  }
  return out;
}

std::string to_jsonl(std::span<const Episode> eps) {
  std::string out;
  for (const auto& e : eps) out += to_jsonl(e);
  return out;
}

std::vector<Episode> parse_episodes(std::string_view text) {
  std::vector<Episode> eps;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  auto check_complete = [&] {
    if (!eps.empty() && static_cast<int>(eps.back().steps.size()) != eps.back().header.steps)
      throw FormatError("episode " + std::to_string(eps.back().header.episode_id) + " declares " +
                        std::to_string(eps.back().header.steps) + " steps but has " +
                        std::to_string(eps.back().steps.size()));
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const auto kind = j.at("record").get<std::string>();
      if (kind == "header") {
        check_complete();
        eps.push_back({parse_header(j), {}});
      } else if (kind == "step") {
        if (eps.empty()) throw FormatError("step record before any header");
        eps.back().steps.push_back(parse_step(j));
      } else {
        throw FormatError("unknown record type '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw FormatError("episode line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw FormatError("episode line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  check_complete();
  return eps;
}

void write_episodes(const std::filesystem::path& path, std::span<const Episode> eps) {
  write_file_atomic(path, to_jsonl(eps));
}

std::vector<Episode> read_episodes(const std::filesystem::path& path) { return parse_episodes(read_file(path)); }

}  // namespace arbiter
