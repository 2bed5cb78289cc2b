#include "arbiter/intent.hpp"

#include <algorithm>
#include <cmath>

namespace arbiter {

namespace {
constexpr int kCoarse = kHeatmapSize / 4;  // 7x7 seed grid, upsampled twice
}

nn::NetworkSpec intent_network_spec(const IntentNetConfig& cfg) {
  nn::TransposedConv2d up1{1, cfg.channels, 4, 2, 1, kCoarse, kCoarse};
  nn::TransposedConv2d up2{cfg.channels, 1, 4, 2, 1, 2 * kCoarse, 2 * kCoarse};
  nn::NetworkSpec spec;
  spec.name = "intent";
  spec.layers = {
      nn::LstmCell{IntentNetConfig::feature_size(), cfg.hidden},
      nn::Dense{cfg.hidden, kCoarse * kCoarse, nn::Activation::Tanh},
      up1,
      nn::TanhLayer{up1.out_size()},
      up2,
      nn::Softmax2d{kHeatmapSize, kHeatmapSize},
  };
  spec.meta = {{"window", cfg.window}, {"v_max", cfg.v_max}, {"blob_sigma", cfg.blob_sigma}};
  spec.validate();
  return spec;
}

IntentNetConfig intent_config_from_spec(const nn::NetworkSpec& spec) {
  if (spec.name != "intent") throw SpecError("network '" + spec.name + "' is not an intent net");
  IntentNetConfig cfg;
  cfg.window = spec.meta.value("window", cfg.window);
  cfg.v_max = spec.meta.value("v_max", cfg.v_max);
  cfg.blob_sigma = spec.meta.value("blob_sigma", cfg.blob_sigma);
  const auto* lstm = std::get_if<nn::LstmCell>(&spec.layers.at(0));
  const auto* up = spec.layers.size() > 2 ? std::get_if<nn::TransposedConv2d>(&spec.layers[2]) : nullptr;
  if (!lstm || !up) throw SpecError("unexpected intent network layout");
  cfg.hidden = lstm->hidden;
  cfg.channels = up->out_ch;
  if (!(intent_network_spec(cfg) == spec)) throw SpecError("unexpected intent network layout");
  return cfg;
}

nn::Vec intent_features(const Vec2& gripper_pos, const Vec2& a_u, const IntentNetConfig& cfg) {
  nn::Vec f(IntentNetConfig::feature_size());
  f << gripper_pos.x(), gripper_pos.y(), a_u.x() / cfg.v_max, a_u.y() / cfg.v_max;
  return f;
}

Vec2 cell_center(int row, int col, const WorldConfig& world) {
  const Vec2 size = world.workspace_max - world.workspace_min;
  return {world.workspace_min.x() + (col + 0.5) * size.x() / kHeatmapSize,
          world.workspace_min.y() + (row + 0.5) * size.y() / kHeatmapSize};
}

int cell_index(const Vec2& p, const WorldConfig& world) {
  const Vec2 size = world.workspace_max - world.workspace_min;
  auto bin = [](double u) { return std::clamp(static_cast<int>(std::floor(u * kHeatmapSize)), 0, kHeatmapSize - 1); };
  const int col = bin((p.x() - world.workspace_min.x()) / size.x());
  const int row = bin((p.y() - world.workspace_min.y()) / size.y());
  return row * kHeatmapSize + col;
}

std::vector<double> goal_scores(const nn::Vec& heatmap, const WorldConfig& world) {
  if (heatmap.size() != kHeatmapSize * kHeatmapSize) throw ArgumentError("heatmap must have 28x28 cells");
  std::vector<double> scores(world.goal_objects.size(), 0.0);
  for (int row = 0; row < kHeatmapSize; ++row) {
    for (int col = 0; col < kHeatmapSize; ++col) {
      const Vec2 c = cell_center(row, col, world);
      for (std::size_t g = 0; g < world.goal_objects.size(); ++g) {
        const auto& o = world.goal_objects[g];
        if (std::abs(c.x() - o.center.x()) <= o.half_extent && std::abs(c.y() - o.center.y()) <= o.half_extent)
          scores[g] += heatmap(row * kHeatmapSize + col);
      }
    }
  }
  return scores;
}

nn::Vec target_heatmap(int goal, const WorldConfig& world, double sigma_cells) {
  if (goal < 0 || goal >= world.num_goals()) throw ArgumentError("goal id out of range");
  const int center = cell_index(world.goal_objects[static_cast<std::size_t>(goal)].center, world);
  const int cr = center / kHeatmapSize, cc = center % kHeatmapSize;
  nn::Vec t(kHeatmapSize * kHeatmapSize);
  for (int row = 0; row < kHeatmapSize; ++row)
    for (int col = 0; col < kHeatmapSize; ++col) {
      const double d2 = (row - cr) * (row - cr) + (col - cc) * (col - cc);
      t(row * kHeatmapSize + col) = std::exp(-0.5 * d2 / (sigma_cells * sigma_cells));
    }
  return t / t.sum();
}

GoalEstimate estimate_goal(std::span<const std::vector<double>> window, int num_goals) {
  GoalEstimate e;
  e.windowed.assign(static_cast<std::size_t>(num_goals), 0.0);
  for (const auto& s : window) {
    if (static_cast<int>(s.size()) != num_goals) throw ArgumentError("score vector has the wrong length");
    for (int g = 0; g < num_goals; ++g) e.windowed[static_cast<std::size_t>(g)] += s[static_cast<std::size_t>(g)];
  }
  e.g_star = static_cast<int>(std::max_element(e.windowed.begin(), e.windowed.end()) - e.windowed.begin());
  double total = 0.0;
  for (double v : e.windowed) total += v;
  e.confidence = total > 0.0 ? e.windowed[static_cast<std::size_t>(e.g_star)] / total : 1.0 / num_goals;
  return e;
}

ScoreWindow::ScoreWindow(int k, int num_goals) : k_(k), num_goals_(num_goals) {
  if (k < 1) throw ConfigError("intent window must be at least 1");
}

GoalEstimate ScoreWindow::push(std::vector<double> scores) {
  scores_.push_back(std::move(scores));
  while (static_cast<int>(scores_.size()) > k_) scores_.pop_front();
  const std::vector<std::vector<double>> window(scores_.begin(), scores_.end());
  return estimate_goal(window, num_goals_);
}

IntentPredictor::IntentPredictor(const nn::Model& model, const WorldConfig& world)
    : model_(&model),
      world_(world),
      cfg_(intent_config_from_spec(model.spec)),
      state_(nn::initial_state(model.spec)),
      window_(cfg_.window, world.num_goals()) {}

void IntentPredictor::reset() {
  state_ = nn::initial_state(model_->spec);
  window_.reset();
}

IntentEstimate IntentPredictor::step(const Vec2& gripper_pos, const Vec2& a_u) {
  IntentEstimate e;
  e.heatmap = nn::step(*model_, state_, intent_features(gripper_pos, a_u, cfg_));
  e.scores = goal_scores(e.heatmap, world_);
  e.goal = window_.push(e.scores);
  return e;
}

nn::Vec predict_heatmap(const nn::Model& model, const nn::Mat& history) {
  if (history.rows() == 0) throw ArgumentError("predict_heatmap needs a non-empty history");
  const nn::Mat out = nn::forward(model, history);
  return out.row(out.rows() - 1).transpose();
}

nn::Mat episode_intent_features(const Episode& ep, const IntentNetConfig& cfg) {
  std::vector<nn::Vec> rows;
  for (const auto& r : ep.steps) {
    if (r.state.phase != Phase::Reach) break;
    rows.push_back(intent_features(r.state.gripper_pos, r.a_u, cfg));
  }
  nn::Mat m(static_cast<Eigen::Index>(rows.size()), IntentNetConfig::feature_size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return m;
}

IntentTrainResult train_intent(std::span<const Episode> episodes, const WorldConfig& world,
                               const IntentNetConfig& cfg, const nn::TrainHyper& hyper, int validation_every) {
  std::vector<nn::Sample> train, val;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& ep = episodes[i];
    if (!ep.header.true_goal) continue;
    nn::Sample s;
    s.inputs = episode_intent_features(ep, cfg);
    if (s.inputs.rows() == 0) continue;
    s.targets = target_heatmap(*ep.header.true_goal, world, cfg.blob_sigma).transpose();
    const bool hold_out = validation_every > 0 && episodes.size() >= 2 * static_cast<std::size_t>(validation_every) &&
                          i % static_cast<std::size_t>(validation_every) == static_cast<std::size_t>(validation_every) - 1;
    (hold_out ? val : train).push_back(std::move(s));
  }
  if (train.empty()) throw TrainingError("no episodes with a known goal to train intent on");
  IntentTrainResult result{nn::init_model(intent_network_spec(cfg), hyper.seed), {}};
  result.report = nn::fit(result.model, train, val, nn::LossKind::CrossEntropy, hyper);
  return result;
}

IntentAccuracy intent_accuracy(const nn::Model& model, std::span<const Episode> episodes, const WorldConfig& world,
                               double progress) {
  const auto cfg = intent_config_from_spec(model.spec);
  IntentAccuracy acc;
  for (const auto& ep : episodes) {
    if (!ep.header.true_goal || ep.steps.empty()) continue;
    const int goal = *ep.header.true_goal;
    const Vec2 target = world.goal_objects.at(static_cast<std::size_t>(goal)).center;
    const double initial = (target - ep.steps.front().state.gripper_pos).norm();
    if (initial <= 0.0) continue;
    nn::RecurrentState state = nn::initial_state(model.spec);
    for (const auto& r : ep.steps) {
      if (r.state.phase != Phase::Reach) break;
      const nn::Vec heat = nn::step(model, state, intent_features(r.state.gripper_pos, r.a_u, cfg));
      if (1.0 - (target - r.state.gripper_pos).norm() / initial < progress) continue;
      const auto scores = goal_scores(heat, world);
      const int top = static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
      ++acc.evaluated;
      if (top == goal) ++acc.correct;
      break;
    }
  }
  return acc;
}

}  // namespace arbiter
