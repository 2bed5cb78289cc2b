#include "arbiter/sim_user.hpp"

#include <algorithm>
#include <cmath>

namespace arbiter {

void SimUserParams::validate(double v_max) const {
  if (!(v_pref > 0.0 && v_pref <= v_max)) throw ConfigError("v_pref must lie in (0, v_max]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  if (!(compliance >= 0.0 && compliance <= 1.0)) throw ConfigError("compliance must lie in [0, 1]");
  if (!std::isfinite(curvature_bias)) throw ConfigError("curvature_bias must be finite");
}

Action user_command(const SimUserParams& params, const WorldState& state, const WorldConfig& world,
                    const std::optional<Vec2>& last_executed, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise = params.noise_sigma * normal(rng);
  const Vec2 to_goal = subgoal(state, params.goal, world) - state.gripper_pos;
  const double dist = to_goal.norm();
  if (dist <= 1e-12) return {Vec2::Zero(), ActionRole::User};

  double heading = std::atan2(to_goal.y(), to_goal.x()) + params.curvature_bias + noise;
  if (params.compliance > 0.0 && last_executed && last_executed->norm() > 1e-12) {
    const double executed = std::atan2(last_executed->y(), last_executed->x());
    heading += params.compliance * wrap_angle(executed - heading);
  }
  const double speed = std::min(params.v_pref, dist / world.dt);
  return {speed * Vec2{std::cos(heading), std::sin(heading)}, ActionRole::User};
}

SimUser::SimUser(SimUserParams params, std::uint64_t seed) : params_(params), rng_(seed) {}

Action SimUser::command(const WorldState& state, const WorldConfig& world, const std::optional<Vec2>& last_executed) {
  return user_command(params_, state, world, last_executed, rng_);
}

SimUserParams UserPopulation::sample(std::uint64_t episode_seed, int num_goals) const {
  std::mt19937_64 rng(episode_seed ^ 0x5bd1e9955bd1e995ULL);
  SimUserParams p;
  p.goal = std::uniform_int_distribution<int>(0, num_goals - 1)(rng);
  p.v_pref = v_pref;
  p.noise_sigma = noise_sigma;
  p.curvature_bias = curvature_bias;
  if (random_bias_sign && std::uniform_int_distribution<int>(0, 1)(rng) == 1) p.curvature_bias = -curvature_bias;
  p.compliance = compliance;
  return p;
}

json to_json(const UserPopulation& p) {
  return {{"v_pref", p.v_pref},
          {"noise_sigma", p.noise_sigma},
          {"curvature_bias", p.curvature_bias},
          {"random_bias_sign", p.random_bias_sign},
          {"compliance", p.compliance}};
}

UserPopulation user_population_from_json(const json& j) {
  UserPopulation p;
  p.v_pref = j.value("v_pref", p.v_pref);
  p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
  p.curvature_bias = j.value("curvature_bias", p.curvature_bias);
  p.random_bias_sign = j.value("random_bias_sign", p.random_bias_sign);
  p.compliance = j.value("compliance", p.compliance);
  return p;
}

std::uint64_t user_seed(std::uint64_t episode_seed) { return episode_seed * 0x9e3779b97f4a7c15ULL + 1; }

Episode run_direct_episode(const SimUserParams& params, const WorldConfig& world, std::uint64_t seed,
                           int episode_id) {
  params.validate(world.v_max);
  WorldState state = reset(world, seed);
  SimUser user(params, user_seed(seed));
  Episode ep;
  ep.header.episode_id = episode_id;
  ep.header.config_hash = config_hash(world);
  ep.header.seed = seed;
  ep.header.mode = ControlMode::Direct;
  ep.header.true_goal = params.goal;
  ep.header.obstacles = state.obstacles;

  std::optional<Vec2> last;
  while (state.phase != Phase::Done && state.t < world.max_steps) {
    const Action a_u = user.command(state, world, last);
    StepRecord r;
    r.state = StateSnapshot::of(state);
    r.a_u = a_u.v;
    r.a_s = clip_norm(a_u.v, world.v_max);
    r.grabbed = state.grabbed.has_value();
    ep.steps.push_back(r);
    state = step(state, {r.a_s, ActionRole::Shared}, world);
    last = r.a_s;
  }
  ep.header.outcome = state.phase == Phase::Done ? Outcome::Success : Outcome::Truncated;
  ep.header.steps = static_cast<int>(ep.steps.size());
  return ep;
}

}  // namespace arbiter
