#include "arbiter/arbitration.hpp"

#include <algorithm>
#include <cmath>

namespace arbiter {

double signed_angle(const Vec2& a, const Vec2& b) {
  if (a.norm() <= kAngleTolerance || b.norm() <= kAngleTolerance)
    throw DegenerateInputError("signed_angle of a near-zero vector");
  const double cross = a.x() * b.y() - a.y() * b.x();
  const double dot = a.dot(b);
  double ang = std::atan2(cross, dot);
  if (ang <= -kPi) ang = kPi;
  return ang;
}

double unsigned_angle(const Vec2& a, const Vec2& b) { return std::abs(signed_angle(a, b)); }

BlendGeometry blend_geometry(const Vec2& a_u, const Vec2& a_r, const Vec2& a_h) {
  BlendGeometry g;
  g.phi = signed_angle(a_u, a_r);
  g.psi = signed_angle(a_u, a_h);
  g.theta_ur = std::abs(g.phi);
  g.theta_uh = std::abs(g.psi);
  g.theta_rh = unsigned_angle(a_r, a_h);
  return g;
}

namespace {
void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
}
}  // namespace

Vec2 blend_linear(const Vec2& a_u, const Vec2& a_r, double alpha, double v_max) {
  check_alpha(alpha);
  return clip_norm(alpha * a_r + (1.0 - alpha) * a_u, v_max);
}

Vec2 blend_rotational(const Vec2& a_u, const Vec2& a_r, double alpha) {
  check_alpha(alpha);
  if (a_u.norm() <= kAngleTolerance) return Vec2::Zero();
  if (a_r.norm() <= kAngleTolerance || alpha == 0.0) return a_u;
  return rotate(a_u, alpha * signed_angle(a_u, a_r));
}

AlphaValue hindsight_alpha(const Vec2& a_u, const Vec2& a_r, const Vec2& a_h) {
  if (a_u.norm() <= kAngleTolerance || a_r.norm() <= kAngleTolerance || a_h.norm() <= kAngleTolerance)
    return {0.0, true};
  const double phi = signed_angle(a_u, a_r);
  if (std::abs(phi) <= kAngleTolerance) return {0.0, true};
  const double psi = signed_angle(a_u, a_h);
  return {std::clamp(psi / phi, 0.0, 1.0), false};
}

const char* to_string(BlendMode m) { return m == BlendMode::Rotational ? "rotational" : "linear"; }

BlendMode blend_mode_from_string(std::string_view s) {
  if (s == "rotational") return BlendMode::Rotational;
  if (s == "linear") return BlendMode::Linear;
  throw ConfigError("unknown blend mode '" + std::string(s) + "'");
}

Vec2 blend(BlendMode mode, const Vec2& a_u, const Vec2& a_r, double alpha, double v_max) {
  if (mode == BlendMode::Linear) return blend_linear(a_u, a_r, alpha, v_max);
  return clip_norm(blend_rotational(a_u, a_r, alpha), v_max);
}

void TimidParams::validate() const {
  if (!(0.0 <= c_lo && c_lo < c_hi && c_hi <= 1.0)) throw ConfigError("timid thresholds need 0 <= c_lo < c_hi <= 1");
  if (!(0.0 <= alpha_max && alpha_max <= 1.0)) throw ConfigError("timid alpha_max must lie in [0, 1]");
}

json to_json(const TimidParams& p) { return {{"c_lo", p.c_lo}, {"c_hi", p.c_hi}, {"alpha_max", p.alpha_max}}; }

TimidParams timid_params_from_json(const json& j) {
  TimidParams p;
  p.c_lo = j.value("c_lo", p.c_lo);
  p.c_hi = j.value("c_hi", p.c_hi);
  p.alpha_max = j.value("alpha_max", p.alpha_max);
  p.validate();
  return p;
}

AlphaValue timid_alpha(double confidence, const TimidParams& p) {
  const double ramp = std::clamp((confidence - p.c_lo) / (p.c_hi - p.c_lo), 0.0, 1.0);
  return {p.alpha_max * ramp, false};
}

nn::NetworkSpec arbitration_network_spec(const ArbNetConfig& cfg) {
  nn::NetworkSpec spec;
  spec.name = "arbitration";
  spec.layers = {
      nn::LstmCell{cfg.feature_size(), cfg.hidden},
      nn::Dense{cfg.hidden, cfg.dense, nn::Activation::Tanh},
      nn::Dense{cfg.dense, 1, nn::Activation::Linear},
      nn::SigmoidLayer{1},
  };
  spec.meta = {{"num_goals", cfg.num_goals}, {"window", cfg.window}, {"v_max", cfg.v_max}};
  spec.validate();
  return spec;
}

ArbNetConfig arb_config_from_spec(const nn::NetworkSpec& spec) {
  if (spec.name != "arbitration") throw SpecError("network '" + spec.name + "' is not an arbitration net");
  ArbNetConfig cfg;
  cfg.num_goals = spec.meta.value("num_goals", cfg.num_goals);
  cfg.window = spec.meta.value("window", cfg.window);
  cfg.v_max = spec.meta.value("v_max", cfg.v_max);
  const auto* lstm = std::get_if<nn::LstmCell>(&spec.layers.at(0));
  const auto* dense = spec.layers.size() > 1 ? std::get_if<nn::Dense>(&spec.layers[1]) : nullptr;
  if (!lstm || !dense) throw SpecError("unexpected arbitration network layout");
  cfg.hidden = lstm->hidden;
  cfg.dense = dense->out;
  if (!(arbitration_network_spec(cfg) == spec)) throw SpecError("unexpected arbitration network layout");
  return cfg;
}

nn::Vec arbitration_features(const ArbFeatureInput& in, const ArbNetConfig& cfg) {
  if (static_cast<int>(in.windowed_scores.size()) != cfg.num_goals)
    throw SpecError("arbitration features expect " + std::to_string(cfg.num_goals) + " goal scores");
  nn::Vec f(cfg.feature_size());
  f(0) = in.gripper_pos.x();
  f(1) = in.gripper_pos.y();
  f(2) = in.a_u.x() / cfg.v_max;
  f(3) = in.a_u.y() / cfg.v_max;
  f(4) = in.a_r.x() / cfg.v_max;
  f(5) = in.a_r.y() / cfg.v_max;
  for (int i = 0; i < cfg.num_goals; ++i) f(6 + i) = in.windowed_scores[static_cast<std::size_t>(i)] / cfg.window;
  f(6 + cfg.num_goals) = in.confidence;
  f(7 + cfg.num_goals) = in.grabbed ? 1.0 : 0.0;
  return f;
}

ArbitrationPredictor::ArbitrationPredictor(const nn::Model& model)
    : model_(&model), state_(nn::initial_state(model.spec)) {}

void ArbitrationPredictor::reset() { state_ = nn::initial_state(model_->spec); }

AlphaValue ArbitrationPredictor::step(const nn::Vec& features) {
  const nn::Vec out = nn::step(*model_, state_, features);
  return {out(0), false};
}

AlphaValue learned_alpha(const nn::Model& model, const nn::Mat& history) {
  if (history.rows() == 0) throw ArgumentError("learned_alpha needs a non-empty history");
  const nn::Mat out = nn::forward(model, history);
  return {out(out.rows() - 1, 0), false};
}

ArbTrainResult train_arbitration(std::span<const AlphaSequence> data, const ArbNetConfig& cfg,
                                 const nn::TrainHyper& hyper, const nn::Model* init, int validation_every) {
  if (data.empty()) throw TrainingError("arbitration dataset is empty");
  const auto spec = arbitration_network_spec(cfg);
  std::vector<nn::Sample> train, val;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& seq = data[i];
    if (seq.features.rows() == 0) continue;
    if (seq.features.cols() != cfg.feature_size()) throw SpecError("alpha sample feature width mismatch");
    nn::Sample s;
    s.inputs = seq.features;
    s.targets = nn::Mat(seq.features.rows(), 1);
    s.weights.resize(static_cast<std::size_t>(seq.features.rows()));
    for (Eigen::Index t = 0; t < seq.features.rows(); ++t) {
      s.targets(t, 0) = seq.targets[static_cast<std::size_t>(t)];
      s.weights[static_cast<std::size_t>(t)] = seq.degenerate[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    }
    const bool hold_out = validation_every > 0 && data.size() >= 2 * static_cast<std::size_t>(validation_every) &&
                          i % static_cast<std::size_t>(validation_every) == static_cast<std::size_t>(validation_every) - 1;
    (hold_out ? val : train).push_back(std::move(s));
  }
  if (train.empty()) throw TrainingError("arbitration dataset has no usable episodes");

  ArbTrainResult result;
  if (init) {
    if (!(init->spec == spec)) throw SpecError("initial arbitration model does not match the configuration");
    result.model = *init;
  } else {
    result.model = nn::init_model(spec, hyper.seed);
  }
  result.report = nn::fit(result.model, train, val, nn::LossKind::MeanSquared, hyper);
  return result;
}

}  // namespace arbiter
