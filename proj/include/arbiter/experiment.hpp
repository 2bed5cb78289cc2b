#pragma once

// Experiment configuration shared by the pipeline stages. Every field has a
// default; a JSON config file overrides any subset.

#include "arbiter/dagger.hpp"
#include "arbiter/motion.hpp"
#include "arbiter/trajopt.hpp"

#include <filesystem>

namespace arbiter {

struct ExperimentConfig {
  std::uint64_t seed = 7;
  WorldConfig world = WorldConfig::default_layout();
  trajopt::OptParams trajopt;

  DemoParams demos;
  DemoParams obstacle_demos;
  MotionNetConfig motion;
  MotionNetConfig motion_obstacles;
  nn::TrainHyper motion_train;

  int intent_episodes = 400;
  UserPopulation intent_users;
  IntentNetConfig intent;
  nn::TrainHyper intent_train;

  ArbNetConfig arbitration;
  DaggerSchedule schedule = DaggerSchedule::preset("paper-fig5");
  UserPopulation dagger_users;

  UserPopulation eval_users;
  int eval_episodes = 100;
  std::vector<std::string> eval_environments{"free", "obstacles"};

  ExperimentConfig();
  void validate() const;
};

json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

double degrees(double deg);

}  // namespace arbiter
