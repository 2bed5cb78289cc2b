#include "arbiter/controller.hpp"

namespace arbiter {

ModelSet load_model_set(const std::filesystem::path& dir) {
  ModelSet set;
  set.intent = nn::load_weights(dir / "intent.weights.json");
  intent_config_from_spec(set.intent.spec);
  set.motion = nn::load_weights(dir / "motion.weights.json");
  motion_config_from_spec(set.motion.spec);
  if (std::filesystem::exists(dir / "motion_obstacles.weights.json")) {
    set.motion_obstacles = nn::load_weights(dir / "motion_obstacles.weights.json");
    motion_config_from_spec(set.motion_obstacles->spec);
  }
  if (std::filesystem::exists(dir / "arbitration.weights.json")) {
    set.arbitration = nn::load_weights(dir / "arbitration.weights.json");
    arb_config_from_spec(set.arbitration->spec);
  }
  return set;
}

const nn::Model& motion_model_for(const ModelSet& models, const WorldState& state) {
  if (!state.obstacles.empty() && models.motion_obstacles) return *models.motion_obstacles;
  return models.motion;
}

nn::Vec decision_features(const WorldState& state, const Vec2& a_u, const Vec2& a_r, const GoalEstimate& goal,
                          const ArbNetConfig& cfg) {
  return arbitration_features(
      {state.gripper_pos, a_u, a_r, goal.windowed, goal.confidence, state.grabbed.has_value()}, cfg);
}

SharedController::SharedController(const ModelSet& models, const WorldConfig& world, ControllerOptions options)
    : models_(&models), world_(world), options_(options), intent_(models.intent, world) {
  options_.timid.validate();
  if (options_.forced_alpha && !(*options_.forced_alpha >= 0.0 && *options_.forced_alpha <= 1.0))
    throw ConfigError("forced alpha must lie in [0, 1]");
  if (models.arbitration) {
    arb_cfg_ = arb_config_from_spec(models.arbitration->spec);
    if (arb_cfg_.num_goals != world.num_goals())
      throw ConfigError("arbitration model expects " + std::to_string(arb_cfg_.num_goals) + " goals");
    arbitration_.emplace(*models.arbitration);
  } else {
    arb_cfg_.num_goals = world.num_goals();
    arb_cfg_.v_max = world.v_max;
  }
  set_mode(options_.mode);
}

void SharedController::set_mode(ControlMode mode) {
  if (mode == ControlMode::SharedLearned && !arbitration_ && !options_.forced_alpha)
    throw ConfigError("shared_learned mode needs an arbitration model");
  options_.mode = mode;
}

void SharedController::reset() {
  intent_.reset();
  if (arbitration_) arbitration_->reset();
}

Decision SharedController::decide(const WorldState& state, const Vec2& a_u) {
  Decision d;
  d.intent = intent_.step(state.gripper_pos, a_u);
  if (options_.perfect_intent_goal) {
    d.intent.goal.g_star = *options_.perfect_intent_goal;
    d.intent.goal.confidence = 1.0;
  }
  d.a_r = motion_act(motion_model_for(*models_, state), state, d.intent.goal.g_star, world_).v;

  if (options_.forced_alpha) {
    d.alpha = *options_.forced_alpha;
  } else {
    switch (options_.mode) {
      case ControlMode::Direct: d.alpha = 0.0; break;
      case ControlMode::SharedBaseline: d.alpha = timid_alpha(d.intent.goal.confidence, options_.timid).alpha; break;
      case ControlMode::SharedLearned:
        d.alpha = arbitration_->step(decision_features(state, a_u, d.a_r, d.intent.goal, arb_cfg_)).alpha;
        break;
    }
  }
  d.a_s = blend(options_.blend, a_u, d.a_r, d.alpha, world_.v_max);
  return d;
}

namespace {

StepRecord make_record(const WorldState& state, const Vec2& a_u, const Decision& d) {
  StepRecord r;
  r.state = StateSnapshot::of(state);
  r.a_u = a_u;
  r.a_r = d.a_r;
  r.a_s = d.a_s;
  r.alpha = d.alpha;
  r.confidence = d.intent.goal.confidence;
  r.windowed_scores = d.intent.goal.windowed;
  r.g_star = d.intent.goal.g_star;
  r.grabbed = state.grabbed.has_value();
  return r;
}

EpisodeHeader make_header(const WorldConfig& world, std::uint64_t seed, ControlMode mode, int episode_id,
                          const WorldState& initial) {
  EpisodeHeader h;
  h.episode_id = episode_id;
  h.config_hash = config_hash(world);
  h.seed = seed;
  h.mode = mode;
  h.obstacles = initial.obstacles;
  return h;
}

}  // namespace

Episode run_shared_episode(SharedController& controller, const SimUserParams& user_params, const WorldConfig& world,
                           std::uint64_t seed, int episode_id) {
  user_params.validate(world.v_max);
  WorldState state = reset(world, seed);
  controller.reset();
  SimUser user(user_params, user_seed(seed));
  Episode ep;
  ep.header = make_header(world, seed, controller.options().mode, episode_id, state);
  ep.header.true_goal = user_params.goal;

  std::optional<Vec2> last;
  while (state.phase != Phase::Done && state.t < world.max_steps) {
    const Vec2 a_u = user.command(state, world, last).v;
    const Decision d = controller.decide(state, a_u);
    ep.steps.push_back(make_record(state, a_u, d));
    state = step(state, {d.a_s, ActionRole::Shared}, world);
    last = d.a_s;
  }
  ep.header.outcome = state.phase == Phase::Done ? Outcome::Success : Outcome::Truncated;
  ep.header.steps = static_cast<int>(ep.steps.size());
  return ep;
}

Episode replay_episode(const Episode& logged, SharedController& controller, const WorldConfig& world) {
  WorldState state = reset(world, logged.header.seed);
  state.obstacles = logged.header.obstacles;
  controller.reset();
  Episode ep;
  ep.header = logged.header;
  for (const auto& rec : logged.steps) {
    if (state.phase == Phase::Done) throw FormatError("logged episode continues after completion");
    const Decision d = controller.decide(state, rec.a_u);
    ep.steps.push_back(make_record(state, rec.a_u, d));
    state = step(state, {d.a_s, ActionRole::Shared}, world);
  }
  return ep;
}

}  // namespace arbiter
