#pragma once

// Goal intent inference. An LSTM reads (gripper position, user command) step by
// step and decodes a 28x28 probability heatmap over the workspace. Per-goal
// scores are the heatmap mass inside each object's footprint; scores are
// summed over a sliding window to pick the predicted goal g* and a confidence.

#include "arbiter/episode.hpp"
#include "arbiter/nn.hpp"
#include "arbiter/train.hpp"

#include <deque>
#include <span>
#include <vector>

namespace arbiter {

inline constexpr int kHeatmapSize = 28;

struct IntentNetConfig {
  int hidden = 64;
  int channels = 8;  // width of the intermediate upsampling layer
  int window = 10;
  double v_max = 0.4;
  double blob_sigma = 1.5;  // training target spread, in cells

  static constexpr int feature_size() { return 4; }
};

nn::NetworkSpec intent_network_spec(const IntentNetConfig& cfg);
IntentNetConfig intent_config_from_spec(const nn::NetworkSpec& spec);

/// [gripper_pos 2, a_u / v_max 2].
nn::Vec intent_features(const Vec2& gripper_pos, const Vec2& a_u, const IntentNetConfig& cfg);

// Heatmap cells are indexed row * 28 + col; row 0 is the bottom of the
// workspace (smallest y).
Vec2 cell_center(int row, int col, const WorldConfig& world);
int cell_index(const Vec2& p, const WorldConfig& world);

/// Heatmap mass whose cell centers fall inside each goal object's footprint.
std::vector<double> goal_scores(const nn::Vec& heatmap, const WorldConfig& world);

/// Normalized Gaussian bump centered on the cell holding `goal`'s center.
nn::Vec target_heatmap(int goal, const WorldConfig& world, double sigma_cells);

struct GoalEstimate {
  std::vector<double> windowed;  // sum of the last <= k score vectors
  int g_star = 0;
  double confidence = 0.0;  // windowed[g*] / sum(windowed); 1/|G| if all zero
};

/// Ties in the argmax go to the lowest index.
GoalEstimate estimate_goal(std::span<const std::vector<double>> window, int num_goals);

class ScoreWindow {
 public:
  explicit ScoreWindow(int k, int num_goals);
  void reset() { scores_.clear(); }
  GoalEstimate push(std::vector<double> scores);

 private:
  int k_;
  int num_goals_;
  std::deque<std::vector<double>> scores_;
};

struct IntentEstimate {
  nn::Vec heatmap;
  std::vector<double> scores;
  GoalEstimate goal;
};

// Incremental evaluator: one step per control tick, reset() per episode.
class IntentPredictor {
 public:
  IntentPredictor(const nn::Model& model, const WorldConfig& world);
  void reset();
  IntentEstimate step(const Vec2& gripper_pos, const Vec2& a_u);

 private:
  const nn::Model* model_;
  WorldConfig world_;
  IntentNetConfig cfg_;
  nn::RecurrentState state_;
  ScoreWindow window_;
};

/// Heatmap after consuming a whole feature history (rows = steps).
nn::Vec predict_heatmap(const nn::Model& model, const nn::Mat& history);

/// Feature rows for an episode's Reach-phase steps.
nn::Mat episode_intent_features(const Episode& ep, const IntentNetConfig& cfg);

struct IntentTrainResult {
  nn::Model model;
  nn::TrainReport report;
};

/// Cross-entropy against the true goal's target heatmap at every Reach step.
/// Every `validation_every`-th episode is held out.
IntentTrainResult train_intent(std::span<const Episode> episodes, const WorldConfig& world,
                               const IntentNetConfig& cfg, const nn::TrainHyper& hyper,
                               int validation_every = 10);

struct IntentAccuracy {
  int evaluated = 0;
  int correct = 0;
  double accuracy() const { return evaluated ? static_cast<double>(correct) / evaluated : 0.0; }
};

/// Fraction of episodes whose instantaneous top goal score is the true goal at
/// the first step where reach progress (1 - remaining / initial distance to
/// the goal) reaches `progress`.
IntentAccuracy intent_accuracy(const nn::Model& model, std::span<const Episode> episodes,
                               const WorldConfig& world, double progress);

}  // namespace arbiter
