#pragma once

// Shared-control loop: intent inference, robot policy, arbitration, blending.

#include "arbiter/arbitration.hpp"
#include "arbiter/episode.hpp"
#include "arbiter/intent.hpp"
#include "arbiter/motion.hpp"
#include "arbiter/sim_user.hpp"

#include <filesystem>
#include <optional>

namespace arbiter {

struct ModelSet {
  nn::Model intent;
  nn::Model motion;
  std::optional<nn::Model> motion_obstacles;  // used when the world has obstacles
  std::optional<nn::Model> arbitration;
};

// Directory layout: intent.weights.json, motion.weights.json and optionally
// motion_obstacles.weights.json and arbitration.weights.json.
ModelSet load_model_set(const std::filesystem::path& dir);

struct ControllerOptions {
  ControlMode mode = ControlMode::SharedLearned;
  BlendMode blend = BlendMode::Rotational;
  TimidParams timid;
  std::optional<double> forced_alpha;      // overrides the arbitration rule
  std::optional<int> perfect_intent_goal;  // g* pinned to this goal, confidence 1
};

struct Decision {
  Vec2 a_r{0.0, 0.0};
  Vec2 a_s{0.0, 0.0};
  double alpha = 0.0;
  IntentEstimate intent;
};

class SharedController {
 public:
  SharedController(const ModelSet& models, const WorldConfig& world, ControllerOptions options);

  void reset();
  Decision decide(const WorldState& state, const Vec2& a_u);

  const ControllerOptions& options() const { return options_; }
  void set_mode(ControlMode mode);

 private:
  const ModelSet* models_;
  WorldConfig world_;
  ControllerOptions options_;
  IntentPredictor intent_;
  std::optional<ArbitrationPredictor> arbitration_;
  ArbNetConfig arb_cfg_;
};

const nn::Model& motion_model_for(const ModelSet& models, const WorldState& state);

/// Arbitration features as the controller computes them for one decision.
nn::Vec decision_features(const WorldState& state, const Vec2& a_u, const Vec2& a_r, const GoalEstimate& goal,
                          const ArbNetConfig& cfg);

/// Runs one simulated-user episode under `controller` (reset first).
Episode run_shared_episode(SharedController& controller, const SimUserParams& user, const WorldConfig& world,
                           std::uint64_t seed, int episode_id = 0);

/// Re-executes a logged episode's user commands; the result is bitwise equal
/// to the log when models and options match.
Episode replay_episode(const Episode& logged, SharedController& controller, const WorldConfig& world);

}  // namespace arbiter
