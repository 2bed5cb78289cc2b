#include "arbiter/trajopt.hpp"

#include <cmath>

namespace arbiter::trajopt {

const char* to_string(Segment s) { return s == Segment::ToObject ? "to_object" : "to_place"; }

double Trajectory::path_length() const {
  double len = 0.0;
  for (std::size_t i = 1; i < waypoints.size(); ++i) len += (waypoints[i] - waypoints[i - 1]).norm();
  return len;
}

void OptParams::validate() const {
  if (!(w_smooth > 0 && w_obstacle > 0 && w_goal > 0)) throw ConfigError("optimizer weights must be positive");
  if (!(margin >= 0)) throw ConfigError("obstacle margin must be non-negative");
  if (!(lambda0 > 0)) throw ConfigError("lambda0 must be positive");
  if (waypoints < 3) throw ConfigError("a trajectory needs at least 3 waypoints");
  if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
  if (!(tol >= 0 && grad_tol >= 0)) throw ConfigError("tolerances must be non-negative");
}

json to_json(const OptParams& p) {
  return {{"w_smooth", p.w_smooth}, {"w_obstacle", p.w_obstacle}, {"margin", p.margin},
          {"w_goal", p.w_goal},     {"lambda0", p.lambda0},       {"max_iterations", p.max_iterations},
          {"tol", p.tol},           {"grad_tol", p.grad_tol},     {"waypoints", p.waypoints}};
}

OptParams opt_params_from_json(const json& j) {
  OptParams p;
  p.w_smooth = j.value("w_smooth", p.w_smooth);
  p.w_obstacle = j.value("w_obstacle", p.w_obstacle);
  p.margin = j.value("margin", p.margin);
  p.w_goal = j.value("w_goal", p.w_goal);
  p.lambda0 = j.value("lambda0", p.lambda0);
  p.max_iterations = j.value("max_iterations", p.max_iterations);
  p.tol = j.value("tol", p.tol);
  p.grad_tol = j.value("grad_tol", p.grad_tol);
  p.waypoints = j.value("waypoints", p.waypoints);
  p.validate();
  return p;
}

Problem::Problem(Vec2 start, Vec2 goal, std::vector<Circle> obstacles, OptParams params)
    : start_(std::move(start)), goal_(std::move(goal)), obstacles_(std::move(obstacles)), params_(params) {
  params_.validate();
}

Eigen::VectorXd Problem::initial_guess() const {
  // Straight line plus a small bulge to one side. The bulge breaks the
  // symmetry that would otherwise pin a path running through an obstacle's
  // center (the SDF gradient there is parallel to the chord).
  const int T = params_.waypoints;
  Eigen::VectorXd x(num_free());
  const Vec2 chord = goal_ - start_;
  const double len = chord.norm();
  const Vec2 normal = len > 1e-12 ? Vec2(-chord.y() / len, chord.x() / len) : Vec2::Zero();
  for (int t = 1; t < T; ++t) {
    const double s = static_cast<double>(t) / (T - 1);
    const Vec2 p = start_ + s * chord + normal * (1e-3 * std::sin(kPi * s));
    x.segment<2>(2 * (t - 1)) = p;
  }
  return x;
}

std::vector<Vec2> Problem::unpack(const Eigen::VectorXd& free) const {
  std::vector<Vec2> pts;
  pts.reserve(static_cast<std::size_t>(params_.waypoints));
  pts.push_back(start_);
  for (int t = 1; t < params_.waypoints; ++t) pts.emplace_back(free.segment<2>(2 * (t - 1)));
  return pts;
}

// Residual layout: [smoothness (T-2)*2 | obstacle T-1 | terminal 2].
Eigen::VectorXd Problem::residuals(const Eigen::VectorXd& free) const {
  const int T = params_.waypoints;
  const auto pts = unpack(free);
  Eigen::VectorXd r(2 * (T - 2) + (T - 1) + 2);
  const double ss = std::sqrt(params_.w_smooth);
  const double so = std::sqrt(params_.w_obstacle);
  int k = 0;
  for (int t = 1; t + 1 < T; ++t) {
    r.segment<2>(k) = ss * (pts[t + 1] - 2.0 * pts[t] + pts[t - 1]);
    k += 2;
  }
  for (int t = 1; t < T; ++t) r(k++) = so * std::max(0.0, params_.margin - signed_distance(pts[t], obstacles_));
  r.segment<2>(k) = std::sqrt(params_.w_goal) * (pts[T - 1] - goal_);
  return r;
}

Eigen::MatrixXd Problem::jacobian(const Eigen::VectorXd& free) const {
  const int T = params_.waypoints;
  const auto pts = unpack(free);
  const int m = 2 * (T - 2) + (T - 1) + 2;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, num_free());
  const double ss = std::sqrt(params_.w_smooth);
  const double so = std::sqrt(params_.w_obstacle);
  // Column index of waypoint t's x coordinate; waypoint 0 is pinned.
  auto col = [](int t) { return 2 * (t - 1); };
  int k = 0;
  for (int t = 1; t + 1 < T; ++t) {
    for (int d = 0; d < 2; ++d) {
      if (t - 1 >= 1) J(k + d, col(t - 1) + d) = ss;
      J(k + d, col(t) + d) = -2.0 * ss;
      J(k + d, col(t + 1) + d) = ss;
    }
    k += 2;
  }
  for (int t = 1; t < T; ++t, ++k) {
    const int idx = closest_obstacle(pts[t], obstacles_);
    if (idx < 0) continue;
    const Circle& c = obstacles_[static_cast<std::size_t>(idx)];
    const Vec2 diff = pts[t] - c.center;
    const double dist = diff.norm();
    if (params_.margin - (dist - c.radius) <= 0.0 || dist < 1e-12) continue;
    const Vec2 grad_sdf = diff / dist;
    J(k, col(t)) = -so * grad_sdf.x();
    J(k, col(t) + 1) = -so * grad_sdf.y();
  }
  const double sg = std::sqrt(params_.w_goal);
  J(k, col(T - 1)) = sg;
  J(k + 1, col(T - 1) + 1) = sg;
  return J;
}

double Problem::cost(const Eigen::VectorXd& free) const { return residuals(free).squaredNorm(); }

Eigen::VectorXd Problem::gradient(const Eigen::VectorXd& free) const {
  return 2.0 * jacobian(free).transpose() * residuals(free);
}

Eigen::VectorXd Problem::gauss_newton_step(const Eigen::VectorXd& free, double lambda) const {
  const Eigen::MatrixXd J = jacobian(free);
  const Eigen::VectorXd r = residuals(free);
  Eigen::MatrixXd H = J.transpose() * J;
  H.diagonal().array() += lambda;
  const Eigen::VectorXd delta = H.ldlt().solve(-(J.transpose() * r));
  if (!delta.allFinite()) throw OptimizationError("Gauss-Newton solve produced non-finite values");
  return delta;
}

OptResult optimize(const Vec2& start, const Vec2& goal, std::span<const Circle> obstacles,
                   const OptParams& params, double dt) {
  Problem problem(start, goal, {obstacles.begin(), obstacles.end()}, params);
  Eigen::VectorXd x = problem.initial_guess();
  double c = problem.cost(x);
  double lambda = params.lambda0;

  OptResult res;
  res.accepted_costs.push_back(c);
  for (int it = 0; it < params.max_iterations; ++it) {
    res.iterations = it + 1;
    const Eigen::VectorXd delta = problem.gauss_newton_step(x, lambda);
    const Eigen::VectorXd candidate = x + delta;
    const double c_new = problem.cost(candidate);
    if (c_new < c) {
      const double decrease = c - c_new;
      x = candidate;
      c = c_new;
      lambda = std::max(lambda / 10.0, 1e-12);
      res.accepted_costs.push_back(c);
      if (decrease < params.tol && problem.gradient(x).cwiseAbs().maxCoeff() < params.grad_tol) {
        res.converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
      // No descent possible even with a tiny gradient step: at a minimum.
      if (lambda > 1e12 || delta.norm() < 1e-15) {
        res.converged = true;
        break;
      }
    }
  }
  res.cost = c;
  res.trajectory.waypoints = problem.unpack(x);
  res.trajectory.dt = dt;
  return res;
}

PickPlacePlan pick_place_plan(const Vec2& start, const Vec2& object, const Vec2& place,
                              std::span<const Circle> obstacles, const OptParams& params, double dt) {
  PickPlacePlan plan{optimize(start, object, obstacles, params, dt), optimize(object, place, obstacles, params, dt)};
  plan.to_object.trajectory.segment = Segment::ToObject;
  plan.to_place.trajectory.segment = Segment::ToPlace;
  return plan;
}

std::vector<VelocityLabel> label_velocities(const Trajectory& traj, double v_max) {
  std::vector<VelocityLabel> out;
  if (traj.waypoints.size() < 2) return out;
  out.reserve(traj.waypoints.size() - 1);
  for (std::size_t t = 0; t + 1 < traj.waypoints.size(); ++t) {
    const Vec2 v = (traj.waypoints[t + 1] - traj.waypoints[t]) / traj.dt;
    out.push_back({traj.waypoints[t], clip_norm(v, v_max)});
  }
  return out;
}

Trajectory retime(const Trajectory& traj, double speed) {
  Trajectory out = traj;
  const double len = traj.path_length();
  const auto segments = static_cast<double>(traj.waypoints.size() - 1);
  if (len > 1e-12 && segments > 0 && speed > 0) out.dt = len / (segments * speed);
  return out;
}

}  // namespace arbiter::trajopt
