#pragma once

// Levenberg-damped Gauss-Newton trajectory optimizer for 2D point paths.
//
// Cost over waypoints x_1..x_T (x_1 pinned to the start):
//   C = w_s * sum ||x_{t+1} - 2 x_t + x_{t-1}||^2
//     + w_o * sum max(0, m - sdf(x_t))^2
//     + w_g * ||x_T - goal||^2
// Every term is a squared residual, so each iteration solves
// (J^T J + lambda I) delta = -J^T r.

#include "arbiter/env.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace arbiter::trajopt {

enum class Segment { ToObject, ToPlace };
const char* to_string(Segment s);

struct Trajectory {
  std::vector<Vec2> waypoints;
  double dt = 0.05;
  Segment segment = Segment::ToObject;

  double path_length() const;
};

struct OptParams {
  double w_smooth = 1.0;
  double w_obstacle = 20.0;
  double margin = 0.06;
  double w_goal = 100.0;
  double lambda0 = 1e-3;
  int max_iterations = 100;
  double tol = 1e-8;
  double grad_tol = 1e-10;  // stop only once max |dC/dx| is also below this
  int waypoints = 40;

  void validate() const;
};

json to_json(const OptParams& p);
OptParams opt_params_from_json(const json& j);

struct OptResult {
  Trajectory trajectory;
  bool converged = false;  // false: max iterations hit, trajectory is best-so-far
  int iterations = 0;
  double cost = 0.0;
  std::vector<double> accepted_costs;  // initial cost followed by every accepted step
};

// Residual model of one optimization problem; exposed so tests can probe the
// Gauss-Newton step directly.
class Problem {
 public:
  Problem(Vec2 start, Vec2 goal, std::vector<Circle> obstacles, OptParams params);

  int num_waypoints() const { return params_.waypoints; }
  int num_free() const { return 2 * (params_.waypoints - 1); }

  // Free variables are waypoints 2..T stacked as (x, y) pairs.
  Eigen::VectorXd initial_guess() const;
  std::vector<Vec2> unpack(const Eigen::VectorXd& free) const;

  Eigen::VectorXd residuals(const Eigen::VectorXd& free) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& free) const;
  double cost(const Eigen::VectorXd& free) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& free) const;  // 2 J^T r
  /// Damped step; throws OptimizationError when the solve yields NaN.
  Eigen::VectorXd gauss_newton_step(const Eigen::VectorXd& free, double lambda) const;

 private:
  Vec2 start_, goal_;
  std::vector<Circle> obstacles_;
  OptParams params_;
};

OptResult optimize(const Vec2& start, const Vec2& goal, std::span<const Circle> obstacles,
                   const OptParams& params, double dt = 0.05);

struct PickPlacePlan {
  OptResult to_object;
  OptResult to_place;
};

PickPlacePlan pick_place_plan(const Vec2& start, const Vec2& object, const Vec2& place,
                              std::span<const Circle> obstacles, const OptParams& params,
                              double dt = 0.05);

struct VelocityLabel {
  Vec2 position;
  Vec2 velocity;
};

/// Finite-difference velocities (x_{t+1} - x_t) / dt clipped to v_max; T-1 labels.
std::vector<VelocityLabel> label_velocities(const Trajectory& traj, double v_max);

/// Re-times a trajectory so its average speed equals `speed` (dt scaled,
/// waypoints untouched). Stationary trajectories keep their dt.
Trajectory retime(const Trajectory& traj, double speed);

}  // namespace arbiter::trajopt
