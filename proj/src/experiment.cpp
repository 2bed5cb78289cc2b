#include "arbiter/experiment.hpp"

namespace arbiter {

double degrees(double deg) { return deg * kPi / 180.0; }

ExperimentConfig::ExperimentConfig() {
  obstacle_demos.trajectories = 24000;
  obstacle_demos.obstacles = 2;
  motion_obstacles.max_obstacles = 2;

  motion_train.epochs = 40;
  motion_train.batch_size = 64;
  motion_train.adam.lr = 2e-3;

  intent_users.noise_sigma = degrees(12.0);
  intent_users.curvature_bias = degrees(10.0);
  intent_users.random_bias_sign = true;
  intent_train.epochs = 30;
  intent_train.batch_size = 8;
  intent_train.adam.lr = 2e-3;

  dagger_users.noise_sigma = degrees(25.0);
  dagger_users.curvature_bias = degrees(15.0);
  eval_users = dagger_users;
}

void ExperimentConfig::validate() const {
  world.validate();
  trajopt.validate();
  if (intent_episodes < 1) throw ConfigError("intent_episodes must be at least 1");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be at least 1");
  if (arbitration.num_goals != world.num_goals())
    throw ConfigError("arbitration num_goals must match the world's goal count");
  for (const auto* u : {&intent_users, &dagger_users, &eval_users}) {
    SimUserParams p;
    p.v_pref = u->v_pref;
    p.noise_sigma = u->noise_sigma;
    p.curvature_bias = u->curvature_bias;
    p.compliance = u->compliance;
    p.validate(world.v_max);
  }
}

namespace {

json net_json(const MotionNetConfig& c) { return {{"hidden", c.hidden}, {"max_obstacles", c.max_obstacles}}; }

MotionNetConfig motion_cfg(const json& j, MotionNetConfig c, double v_max) {
  c.hidden = j.value("hidden", c.hidden);
  c.max_obstacles = j.value("max_obstacles", c.max_obstacles);
  c.v_max = v_max;
  return c;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  return {
      {"seed", c.seed},
      {"world", to_json(c.world)},
      {"trajopt", trajopt::to_json(c.trajopt)},
      {"demos", to_json(c.demos)},
      {"obstacle_demos", to_json(c.obstacle_demos)},
      {"motion", net_json(c.motion)},
      {"motion_obstacles", net_json(c.motion_obstacles)},
      {"motion_train", nn::to_json(c.motion_train)},
      {"intent_episodes", c.intent_episodes},
      {"intent_users", to_json(c.intent_users)},
      {"intent", {{"hidden", c.intent.hidden}, {"channels", c.intent.channels}, {"window", c.intent.window},
                  {"blob_sigma", c.intent.blob_sigma}}},
      {"intent_train", nn::to_json(c.intent_train)},
      {"arbitration", {{"hidden", c.arbitration.hidden}, {"dense", c.arbitration.dense}}},
      {"schedule", to_json(c.schedule)},
      {"dagger_users", to_json(c.dagger_users)},
      {"eval_users", to_json(c.eval_users)},
      {"eval_episodes", c.eval_episodes},
      {"eval_environments", c.eval_environments},
  };
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("world")) c.world = world_config_from_json(j.at("world"));
    if (j.contains("trajopt")) c.trajopt = trajopt::opt_params_from_json(j.at("trajopt"));
    if (j.contains("demos")) c.demos = demo_params_from_json(j.at("demos"));
    if (j.contains("obstacle_demos")) c.obstacle_demos = demo_params_from_json(j.at("obstacle_demos"));
    c.motion = motion_cfg(j.value("motion", json::object()), c.motion, c.world.v_max);
    c.motion_obstacles = motion_cfg(j.value("motion_obstacles", json::object()), c.motion_obstacles, c.world.v_max);
    if (j.contains("motion_train")) c.motion_train = nn::train_hyper_from_json(j.at("motion_train"), c.motion_train);
    c.intent_episodes = j.value("intent_episodes", c.intent_episodes);
    if (j.contains("intent_users")) c.intent_users = user_population_from_json(j.at("intent_users"));
    if (j.contains("intent")) {
      const auto& i = j.at("intent");
      c.intent.hidden = i.value("hidden", c.intent.hidden);
      c.intent.channels = i.value("channels", c.intent.channels);
      c.intent.window = i.value("window", c.intent.window);
      c.intent.blob_sigma = i.value("blob_sigma", c.intent.blob_sigma);
    }
    if (j.contains("intent_train")) c.intent_train = nn::train_hyper_from_json(j.at("intent_train"), c.intent_train);
    if (j.contains("arbitration")) {
      c.arbitration.hidden = j.at("arbitration").value("hidden", c.arbitration.hidden);
      c.arbitration.dense = j.at("arbitration").value("dense", c.arbitration.dense);
    }
    if (j.contains("schedule")) c.schedule = dagger_schedule_from_json(j.at("schedule"));
    if (j.contains("dagger_users")) c.dagger_users = user_population_from_json(j.at("dagger_users"));
    if (j.contains("eval_users")) c.eval_users = user_population_from_json(j.at("eval_users"));
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    if (j.contains("eval_environments"))
      c.eval_environments = j.at("eval_environments").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  c.intent.v_max = c.world.v_max;
  c.arbitration.v_max = c.world.v_max;
  c.arbitration.num_goals = c.world.num_goals();
  c.arbitration.window = c.intent.window;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace arbiter
