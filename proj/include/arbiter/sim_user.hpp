#pragma once

// Simulated teleoperator: heads for its subgoal with a constant angular bias
// plus Gaussian heading noise, optionally pulled toward the direction the
// gripper actually moved on the previous step.

#include "arbiter/episode.hpp"

#include <optional>
#include <random>

namespace arbiter {

struct SimUserParams {
  int goal = 0;
  double v_pref = 0.35;
  double noise_sigma = 0.17;   // radians
  double curvature_bias = 0.0; // radians, positive = counterclockwise
  double compliance = 0.0;     // in [0, 1]

  /// Throws ConfigError for v_pref outside (0, v_max], negative sigma or
  /// compliance outside [0, 1].
  void validate(double v_max) const;
};

/// One command. Always draws exactly one normal variate from `rng`.
Action user_command(const SimUserParams& params, const WorldState& state, const WorldConfig& world,
                    const std::optional<Vec2>& last_executed, std::mt19937_64& rng);

class SimUser {
 public:
  SimUser(SimUserParams params, std::uint64_t seed);
  Action command(const WorldState& state, const WorldConfig& world, const std::optional<Vec2>& last_executed);
  const SimUserParams& params() const { return params_; }

 private:
  SimUserParams params_;
  std::mt19937_64 rng_;
};

// Distribution over simulated users; one user is drawn per episode seed.
struct UserPopulation {
  double v_pref = 0.35;
  double noise_sigma = 0.17;
  double curvature_bias = 0.0;
  bool random_bias_sign = false;  // flip the bias sign per episode
  double compliance = 0.0;

  SimUserParams sample(std::uint64_t episode_seed, int num_goals) const;
};

json to_json(const UserPopulation& p);
UserPopulation user_population_from_json(const json& j);

/// Seeds for the world and the user's noise stream of one episode.
std::uint64_t user_seed(std::uint64_t episode_seed);

/// Unassisted episode: the user's command is executed directly.
Episode run_direct_episode(const SimUserParams& params, const WorldConfig& world, std::uint64_t seed,
                           int episode_id = 0);

}  // namespace arbiter
