#pragma once

// Deterministic 2D pick-and-place world: a point gripper in the unit square,
// square goal objects, a circular place target and circular obstacles.

#include "arbiter/common.hpp"

#include <optional>
#include <span>
#include <vector>

namespace arbiter {

struct GoalObject {
  Vec2 center{0.0, 0.0};
  double half_extent = 0.03;
};

struct PlaceTarget {
  Vec2 center{0.5, 0.1};
  double radius = 0.05;
};

struct Circle {
  Vec2 center{0.0, 0.0};
  double radius = 0.0;
};

// Obstacles drawn at reset time in the horizontal band between the start row
// and the object row.
struct ObstacleRandomization {
  int count = 0;
  double radius = 0.06;
  double y_min = 0.35;
  double y_max = 0.6;
};

struct WorldConfig {
  Vec2 workspace_min{0.0, 0.0};
  Vec2 workspace_max{1.0, 1.0};
  std::vector<GoalObject> goal_objects;
  PlaceTarget place_target;
  std::vector<Circle> obstacles;
  ObstacleRandomization random_obstacles;
  Vec2 gripper_start{0.5, 0.2};
  double dt = 0.05;
  double v_max = 0.4;
  double grab_radius = 0.05;
  int max_steps = 600;

  /// Four objects in a row at y = 0.75, place target below the start.
  static WorldConfig default_layout();
  /// Default layout plus `count` randomized obstacles.
  static WorldConfig obstacle_layout(int count = 2, double radius = 0.06);

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  bool contains(const Vec2& p) const;
  double diagonal() const { return (workspace_max - workspace_min).norm(); }
  int num_goals() const { return static_cast<int>(goal_objects.size()); }
};

json to_json(const WorldConfig& cfg);
WorldConfig world_config_from_json(const json& j);
/// Fingerprint of the canonical JSON encoding.
std::string config_hash(const WorldConfig& cfg);

enum class Phase { Reach = 0, Carry = 1, Done = 2 };
const char* to_string(Phase p);
Phase phase_from_string(std::string_view s);

struct WorldState {
  int t = 0;
  Vec2 gripper_pos{0.0, 0.0};
  Vec2 gripper_vel{0.0, 0.0};
  std::optional<int> grabbed;
  Phase phase = Phase::Reach;
  std::vector<Vec2> object_positions;
  std::vector<Circle> obstacles;
};

enum class ActionRole { User, Robot, Shared, Hindsight };
const char* to_string(ActionRole r);

struct Action {
  Vec2 v{0.0, 0.0};
  ActionRole role = ActionRole::User;
};

/// Advances the world by one dt. Pure: identical inputs give identical output.
/// Throws InvalidActionError for non-finite actions and ArgumentError when the
/// episode is already Done.
WorldState step(const WorldState& state, const Action& a, const WorldConfig& cfg);

/// Initial state. Randomized obstacles (if requested) are drawn from `seed`;
/// throws ConfigError when they cannot be placed after 1000 rejection samples.
WorldState reset(const WorldConfig& cfg, std::uint64_t seed);

/// Sentinel returned by signed_distance for an empty obstacle list.
inline constexpr double kNoObstacleDistance = 1e3;

/// Minimum signed distance from `p` to the circle boundaries (negative inside).
double signed_distance(const Vec2& p, std::span<const Circle> obstacles);

/// Index of the circle realizing signed_distance, or -1 when there are none.
int closest_obstacle(const Vec2& p, std::span<const Circle> obstacles);

inline bool is_success(const WorldState& s) { return s.phase == Phase::Done; }

/// The point the gripper should head for: the given goal object while
/// reaching, the place target once something is carried.
Vec2 subgoal(const WorldState& s, int goal, const WorldConfig& cfg);

}  // namespace arbiter
