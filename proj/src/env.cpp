#include "arbiter/env.hpp"

#include <algorithm>
#include <limits>
#include <random>

namespace arbiter {

WorldConfig WorldConfig::default_layout() {
  WorldConfig cfg;
  for (double x : {0.2, 0.4, 0.6, 0.8}) cfg.goal_objects.push_back({Vec2{x, 0.75}, 0.03});
  cfg.place_target = {Vec2{0.5, 0.1}, 0.05};
  cfg.gripper_start = {0.5, 0.2};
  return cfg;
}

WorldConfig WorldConfig::obstacle_layout(int count, double radius) {
  WorldConfig cfg = default_layout();
  cfg.random_obstacles.count = count;
  cfg.random_obstacles.radius = radius;
  return cfg;
}

bool WorldConfig::contains(const Vec2& p) const {
  return p.x() >= workspace_min.x() && p.x() <= workspace_max.x() && p.y() >= workspace_min.y() &&
         p.y() <= workspace_max.y();
}

void WorldConfig::validate() const {
  if (!(workspace_max.x() > workspace_min.x() && workspace_max.y() > workspace_min.y()))
    throw ConfigError("workspace bounds are empty");
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (!(v_max > 0.0)) throw ConfigError("v_max must be positive");
  if (!(grab_radius > 0.0)) throw ConfigError("grab_radius must be positive");
  if (max_steps < 1) throw ConfigError("max_steps must be at least 1");
  if (goal_objects.empty()) throw ConfigError("at least one goal object is required");
  for (std::size_t i = 0; i < goal_objects.size(); ++i) {
    const auto& o = goal_objects[i];
    if (!(o.half_extent > 0.0)) throw ConfigError("goal object half_extent must be positive");
    const Vec2 lo = o.center.array() - o.half_extent;
    const Vec2 hi = o.center.array() + o.half_extent;
    if (!contains(lo) || !contains(hi))
      throw ConfigError("goal object " + std::to_string(i) + " lies outside the workspace");
  }
  if (!contains(place_target.center)) throw ConfigError("place target lies outside the workspace");
  if (!(place_target.radius > 0.0)) throw ConfigError("place target radius must be positive");
  for (const auto& c : obstacles) {
    if (!contains(c.center) || !(c.radius > 0.0)) throw ConfigError("invalid obstacle");
  }
  if (!contains(gripper_start)) throw ConfigError("gripper start lies outside the workspace");
  const auto& r = random_obstacles;
  if (r.count < 0) throw ConfigError("random obstacle count must be non-negative");
  if (r.count > 0 && (!(r.radius > 0.0) || r.y_max < r.y_min))
    throw ConfigError("invalid obstacle randomization band");
}

json to_json(const WorldConfig& cfg) {
  json objects = json::array();
  for (const auto& o : cfg.goal_objects)
    objects.push_back({{"center", to_json(o.center)}, {"half_extent", o.half_extent}});
  json obstacles = json::array();
  for (const auto& c : cfg.obstacles)
    obstacles.push_back({{"center", to_json(c.center)}, {"radius", c.radius}});
  return {
      {"workspace", {{"min", to_json(cfg.workspace_min)}, {"max", to_json(cfg.workspace_max)}}},
      {"goal_objects", objects},
      {"place_target", {{"center", to_json(cfg.place_target.center)}, {"radius", cfg.place_target.radius}}},
      {"obstacles", obstacles},
      {"random_obstacles",
       {{"count", cfg.random_obstacles.count},
        {"radius", cfg.random_obstacles.radius},
        {"y_min", cfg.random_obstacles.y_min},
        {"y_max", cfg.random_obstacles.y_max}}},
      {"gripper_start", to_json(cfg.gripper_start)},
      {"dt", cfg.dt},
      {"v_max", cfg.v_max},
      {"grab_radius", cfg.grab_radius},
      {"max_steps", cfg.max_steps},
  };
}

WorldConfig world_config_from_json(const json& j) {
  // Missing keys fall back to the default layout so partial config files work.
  WorldConfig cfg = WorldConfig::default_layout();
  try {
    if (j.contains("workspace")) {
      cfg.workspace_min = vec2_from_json(j.at("workspace").at("min"));
      cfg.workspace_max = vec2_from_json(j.at("workspace").at("max"));
    }
    if (j.contains("goal_objects")) {
      cfg.goal_objects.clear();
      for (const auto& o : j.at("goal_objects"))
        cfg.goal_objects.push_back({vec2_from_json(o.at("center")), o.value("half_extent", 0.03)});
    }
    if (j.contains("place_target")) {
      cfg.place_target.center = vec2_from_json(j.at("place_target").at("center"));
      cfg.place_target.radius = j.at("place_target").value("radius", 0.05);
    }
    if (j.contains("obstacles")) {
      cfg.obstacles.clear();
      for (const auto& c : j.at("obstacles"))
        cfg.obstacles.push_back({vec2_from_json(c.at("center")), c.at("radius").get<double>()});
    }
    if (j.contains("random_obstacles")) {
      const auto& r = j.at("random_obstacles");
      cfg.random_obstacles.count = r.value("count", 0);
      cfg.random_obstacles.radius = r.value("radius", 0.06);
      cfg.random_obstacles.y_min = r.value("y_min", 0.35);
      cfg.random_obstacles.y_max = r.value("y_max", 0.6);
    }
    if (j.contains("gripper_start")) cfg.gripper_start = vec2_from_json(j.at("gripper_start"));
    cfg.dt = j.value("dt", cfg.dt);
    cfg.v_max = j.value("v_max", cfg.v_max);
    cfg.grab_radius = j.value("grab_radius", cfg.grab_radius);
    cfg.max_steps = j.value("max_steps", cfg.max_steps);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed world config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string config_hash(const WorldConfig& cfg) { return hex64(fnv1a64(to_json(cfg).dump())); }

const char* to_string(Phase p) {
  switch (p) {
    case Phase::Reach: return "reach";
    case Phase::Carry: return "carry";
    case Phase::Done: return "done";
  }
  return "?";
}

Phase phase_from_string(std::string_view s) {
  if (s == "reach") return Phase::Reach;
  if (s == "carry") return Phase::Carry;
  if (s == "done") return Phase::Done;
  throw FormatError("unknown phase '" + std::string(s) + "'");
}

const char* to_string(ActionRole r) {
  switch (r) {
    case ActionRole::User: return "user";
    case ActionRole::Robot: return "robot";
    case ActionRole::Shared: return "shared";
    case ActionRole::Hindsight: return "hindsight";
  }
  return "?";
}

WorldState step(const WorldState& state, const Action& a, const WorldConfig& cfg) {
  if (state.phase == Phase::Done) throw ArgumentError("step called on a finished episode");
  if (!is_finite(a.v)) throw InvalidActionError("action has non-finite components");

  WorldState next = state;
  const Vec2 v = clip_norm(a.v, cfg.v_max);
  Vec2 pos = state.gripper_pos + v * cfg.dt;
  pos = pos.cwiseMax(cfg.workspace_min).cwiseMin(cfg.workspace_max);
  next.gripper_vel = (pos - state.gripper_pos) / cfg.dt;
  next.gripper_pos = pos;
  next.t = state.t + 1;

  if (state.phase == Phase::Reach) {
    int nearest = -1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < next.object_positions.size(); ++i) {
      const double d = (next.object_positions[i] - pos).norm();
      if (d < best) {
        best = d;
        nearest = static_cast<int>(i);
      }
    }
    if (nearest >= 0 && best <= cfg.grab_radius) {
      next.grabbed = nearest;
      next.phase = Phase::Carry;
    }
  } else if (state.phase == Phase::Carry) {
    if ((pos - cfg.place_target.center).norm() <= cfg.place_target.radius) next.phase = Phase::Done;
  }
  if (next.grabbed) next.object_positions[static_cast<std::size_t>(*next.grabbed)] = pos;
  return next;
}

namespace {

std::vector<Circle> sample_obstacles(const WorldConfig& cfg, std::uint64_t seed) {
  const auto& spec = cfg.random_obstacles;
  std::vector<Circle> out = cfg.obstacles;
  if (spec.count == 0) return out;
  std::mt19937_64 rng(seed);
  const double r = spec.radius;
  std::uniform_real_distribution<double> ux(cfg.workspace_min.x() + r, cfg.workspace_max.x() - r);
  std::uniform_real_distribution<double> uy(spec.y_min, spec.y_max);
  auto clear_of_layout = [&](const Vec2& c) {
    for (const auto& o : cfg.goal_objects)
      if ((c - o.center).norm() < r + o.half_extent * std::sqrt(2.0) + cfg.grab_radius) return false;
    if ((c - cfg.place_target.center).norm() < r + cfg.place_target.radius) return false;
    if ((c - cfg.gripper_start).norm() < r + cfg.grab_radius) return false;
    for (const auto& other : out)
      if ((c - other.center).norm() < r + other.radius) return false;
    return true;
  };
  for (int k = 0; k < spec.count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const Vec2 c{ux(rng), uy(rng)};
      if (clear_of_layout(c)) {
        out.push_back({c, r});
        placed = true;
      }
    }
    if (!placed)
      throw ConfigError("could not place randomized obstacle " + std::to_string(k) +
                        " after 1000 samples");
  }
  return out;
}

}  // namespace

WorldState reset(const WorldConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  WorldState s;
  s.t = 0;
  s.gripper_pos = cfg.gripper_start;
  s.gripper_vel = Vec2::Zero();
  s.grabbed.reset();
  s.phase = Phase::Reach;
  for (const auto& o : cfg.goal_objects) s.object_positions.push_back(o.center);
  s.obstacles = sample_obstacles(cfg, seed);
  return s;
}

double signed_distance(const Vec2& p, std::span<const Circle> obstacles) {
  double best = kNoObstacleDistance;
  for (const auto& c : obstacles) best = std::min(best, (p - c.center).norm() - c.radius);
  return best;
}

int closest_obstacle(const Vec2& p, std::span<const Circle> obstacles) {
  int idx = -1;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < obstacles.size(); ++i) {
    const double d = (p - obstacles[i].center).norm() - obstacles[i].radius;
    if (d < best) {
      best = d;
      idx = static_cast<int>(i);
    }
  }
  return idx;
}

Vec2 subgoal(const WorldState& s, int goal, const WorldConfig& cfg) {
  if (s.phase != Phase::Reach) return cfg.place_target.center;
  if (goal < 0 || goal >= cfg.num_goals()) throw ArgumentError("goal id out of range");
  return cfg.goal_objects[static_cast<std::size_t>(goal)].center;
}

}  // namespace arbiter
