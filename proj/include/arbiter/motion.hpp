#pragma once

// Goal-conditioned motion policy regressed on optimized trajectories.
//
// A feed-forward net maps (gripper position, grabbed flag, current target and
// optionally nearby obstacles) to an unconstrained 2-vector z, squashed to a
// velocity v = v_max * tanh(|z|) * z / |z| so that |v| < v_max always holds.

#include "arbiter/env.hpp"
#include "arbiter/nn.hpp"
#include "arbiter/train.hpp"
#include "arbiter/trajopt.hpp"

#include <span>
#include <vector>

namespace arbiter {

struct MotionNetConfig {
  int hidden = 64;
  int max_obstacles = 0;  // obstacle slots in the feature vector
  double v_max = 0.4;

  int feature_size() const { return 5 + 3 * max_obstacles; }
};

nn::NetworkSpec motion_network_spec(const MotionNetConfig& cfg);
MotionNetConfig motion_config_from_spec(const nn::NetworkSpec& spec);

/// [pos 2, grabbed 1, target 2, then (cx, cy, r) per obstacle slot, nearest
/// first, zero-padded]. Extra obstacles beyond the slots are ignored.
nn::Vec motion_features(const Vec2& pos, bool grabbed, const Vec2& target, std::span<const Circle> obstacles,
                        const MotionNetConfig& cfg);

Vec2 squash_velocity(const Vec2& z, double v_max);
/// d squash / d z.
Eigen::Matrix2d squash_jacobian(const Vec2& z, double v_max);

/// Robot action toward `goal` (the place target once something is grabbed).
Action motion_act(const nn::Model& model, const WorldState& state, int goal, const WorldConfig& world,
                  ActionRole role = ActionRole::Robot);

// One regression pair extracted from an optimized, retimed trajectory.
struct DemoSample {
  int trajectory = 0;
  Vec2 pos{0.0, 0.0};
  bool grabbed = false;
  Vec2 target{0.0, 0.0};
  std::vector<Circle> obstacles;
  Vec2 velocity{0.0, 0.0};
};

json to_json(const DemoSample& s);
DemoSample demo_sample_from_json(const json& j);

struct DemoParams {
  int trajectories = 3000;
  double speed = 0.35;       // every demonstration is retimed to this speed
  double random_object_fraction = 0.5;  // otherwise a layout object is the pick target
  int obstacles = 0;         // random obstacles per problem
  double edge_margin = 0.05; // starts and objects keep this distance from the walls
};

json to_json(const DemoParams& p);
DemoParams demo_params_from_json(const json& j);

struct DemoSet {
  std::vector<DemoSample> samples;
  int trajectories = 0;
  int rejected = 0;  // problems re-drawn because the optimizer did not converge
};

/// Solves random pick-and-place problems and labels every waypoint with the
/// retimed finite-difference velocity. Deterministic in `seed`.
DemoSet generate_demos(const WorldConfig& world, const trajopt::OptParams& opt, const DemoParams& params,
                       std::uint64_t seed);

struct MotionTrainResult {
  nn::Model model;
  nn::TrainReport report;  // losses are mean squared velocity errors
};

/// Squared-error regression through the squashing; 10% of trajectories are
/// held out for validation and the best validation weights are kept.
MotionTrainResult train_motion(std::span<const DemoSample> samples, const MotionNetConfig& cfg,
                               const nn::TrainHyper& hyper);

/// Mean squared velocity error of the policy on a sample set.
double motion_mse(const nn::Model& model, std::span<const DemoSample> samples);

}  // namespace arbiter
