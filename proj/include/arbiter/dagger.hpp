#pragma once

// Hindsight data aggregation for the arbitration network: collect episodes
// under the current arbitration, relabel every step with the hindsight alpha,
// aggregate and retrain from the previous model.

#include "arbiter/controller.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace arbiter {

struct AlphaSample {
  int episode_id = 0;
  int t = 0;
  nn::Vec features;
  double target = 0.0;
  bool degenerate = false;
};

/// Hindsight action: what the motion policy would have done with the true goal.
Action hindsight_action(const ModelSet& models, const WorldState& state, int true_goal, const WorldConfig& world);

/// One sample per step except a final step that completed the task. Throws
/// LabelingError when the episode has no true goal or was recorded in a
/// different world.
std::vector<AlphaSample> hindsight_label(const Episode& ep, const ModelSet& models, const WorldConfig& world,
                                         const ArbNetConfig& cfg);

/// Groups consecutive samples of the same episode into training sequences.
std::vector<AlphaSequence> group_sequences(std::span<const AlphaSample> samples);

std::string alpha_dataset_to_jsonl(std::span<const AlphaSample> samples);
std::vector<AlphaSample> parse_alpha_dataset(std::string_view text);

struct DaggerSchedule {
  std::string name = "paper-fig5";
  int direct_episodes = 100;
  int iterations = 4;
  int episodes_per_iteration = 30;
  nn::TrainHyper pretrain;
  nn::TrainHyper retrain;

  static DaggerSchedule preset(std::string_view name);
  /// Episode counts multiplied by `scale` (each at least 1).
  DaggerSchedule scaled(double scale) const;
};

json to_json(const DaggerSchedule& s);
DaggerSchedule dagger_schedule_from_json(const json& j);

// Seed of the i-th episode of stage `stage` (0 = direct collection).
std::uint64_t collection_seed(std::uint64_t base, int stage, int index);
std::uint64_t evaluation_seed(std::uint64_t base, int index);

struct AggregationResult {
  std::vector<nn::Model> lineage;         // model_0 .. model_K
  std::vector<AlphaSample> dataset;       // everything aggregated so far
  std::vector<std::size_t> dataset_sizes; // samples after each stage
  std::vector<int> episode_counts;        // shared episodes behind each model
  std::vector<Episode> episodes;          // every collected episode, in order
};

struct AggregationOptions {
  std::uint64_t seed = 0;
  ArbNetConfig arb;
  BlendMode blend = BlendMode::Rotational;
  std::optional<std::filesystem::path> out_dir;  // snapshots after each stage
  std::function<void(const std::string&)> log;
};

/// Throws Error tagged with the failing stage ("pretrain", "collect-2", ...);
/// snapshots from earlier stages stay on disk.
AggregationResult run_aggregation(const DaggerSchedule& schedule, const UserPopulation& users,
                                  const WorldConfig& world, const ModelSet& models, const AggregationOptions& opts);

struct MetricsRow {
  std::string mode;
  std::string environment;
  int n = 0;
  double success_rate = 0.0;
  double mean_steps = 0.0;  // over successful episodes
  double median_steps = 0.0;
  double std_steps = 0.0;
  double mean_alpha = 0.0;
  double wrong_goal_fraction = 0.0;  // reach-phase steps with g* != true goal
};

MetricsRow summarize(std::string mode, std::string environment, std::span<const Episode> eps);

struct EvalOptions {
  std::vector<ControlMode> modes;
  std::vector<std::string> environments{"free"};  // "free" or "obstacles"
  int episodes = 100;
  std::uint64_t seed = 0;
  BlendMode blend = BlendMode::Rotational;
  TimidParams timid;
  bool perfect_intent = false;
};

/// World for a named evaluation environment derived from `base`.
WorldConfig environment_world(const WorldConfig& base, const std::string& environment);

/// Paired seeds: episode i uses the same world, user and noise in every mode.
std::vector<MetricsRow> evaluate(const EvalOptions& opts, const UserPopulation& users, const WorldConfig& world,
                                 const ModelSet& models, std::vector<Episode>* episodes = nullptr);

std::string metrics_csv(std::span<const MetricsRow> rows);

}  // namespace arbiter
