#pragma once

// Policy blending and arbitration.
//
//   linear blend:      a_s = alpha * a_r + (1 - alpha) * a_u   (clipped to v_max)
//   rotational blend:  a_s = R(alpha * phi) a_u,  phi = signed angle a_u -> a_r
//   hindsight alpha:   the rotation fraction that turns a_u toward a_h,
//                      clamp(psi / phi, 0, 1) with psi = signed angle a_u -> a_h
//
// The rotational blend leaves the user's speed untouched and only assists
// with direction.

#include "arbiter/nn.hpp"
#include "arbiter/train.hpp"

#include <span>
#include <vector>

namespace arbiter {

inline constexpr double kAngleTolerance = 1e-9;

struct AlphaValue {
  double alpha = 0.0;
  bool degenerate = false;
};

struct BlendGeometry {
  double theta_ur = 0.0;  // unsigned angles in [0, pi]
  double theta_uh = 0.0;
  double theta_rh = 0.0;
  double phi = 0.0;  // signed a_u -> a_r, (-pi, pi]
  double psi = 0.0;  // signed a_u -> a_h, (-pi, pi]
};

/// Counterclockwise angle from `a` to `b` in (-pi, pi]; exactly opposed
/// vectors give +pi. Throws DegenerateInputError for near-zero inputs.
double signed_angle(const Vec2& a, const Vec2& b);

/// Unsigned angle in [0, pi].
double unsigned_angle(const Vec2& a, const Vec2& b);

BlendGeometry blend_geometry(const Vec2& a_u, const Vec2& a_r, const Vec2& a_h);

/// Throws ArgumentError if alpha is outside [0, 1].
Vec2 blend_linear(const Vec2& a_u, const Vec2& a_r, double alpha, double v_max);
Vec2 blend_rotational(const Vec2& a_u, const Vec2& a_r, double alpha);

AlphaValue hindsight_alpha(const Vec2& a_u, const Vec2& a_r, const Vec2& a_h);

enum class BlendMode { Rotational, Linear };
const char* to_string(BlendMode m);
BlendMode blend_mode_from_string(std::string_view s);

/// Dispatches on `mode`; the result is always clipped to v_max.
Vec2 blend(BlendMode mode, const Vec2& a_u, const Vec2& a_r, double alpha, double v_max);

// Hand-crafted confidence -> alpha ramp used as the conservative baseline.
struct TimidParams {
  double c_lo = 0.55;
  double c_hi = 0.85;
  double alpha_max = 0.8;

  void validate() const;
};

json to_json(const TimidParams& p);
TimidParams timid_params_from_json(const json& j);

AlphaValue timid_alpha(double confidence, const TimidParams& params = {});

// Learned arbitration: LSTM over per-step features, dense head, sigmoid alpha.
struct ArbNetConfig {
  int num_goals = 4;
  int hidden = 32;
  int dense = 32;
  int window = 10;     // scores are fed as windowed sums / window
  double v_max = 0.4;  // commands are fed divided by v_max

  int feature_size() const { return 8 + num_goals; }
};

nn::NetworkSpec arbitration_network_spec(const ArbNetConfig& cfg);
ArbNetConfig arb_config_from_spec(const nn::NetworkSpec& spec);

struct ArbFeatureInput {
  Vec2 gripper_pos;
  Vec2 a_u;
  Vec2 a_r;
  std::vector<double> windowed_scores;
  double confidence = 0.0;
  bool grabbed = false;
};

/// [gripper_pos 2, a_u 2, a_r 2, scores |G|, confidence, grabbed].
nn::Vec arbitration_features(const ArbFeatureInput& in, const ArbNetConfig& cfg);

// Stateful per-episode evaluator; reset() at episode start.
class ArbitrationPredictor {
 public:
  explicit ArbitrationPredictor(const nn::Model& model);
  void reset();
  AlphaValue step(const nn::Vec& features);

 private:
  const nn::Model* model_;
  nn::RecurrentState state_;
};

/// Alpha for the last row of a full feature history.
AlphaValue learned_alpha(const nn::Model& model, const nn::Mat& history);

struct AlphaSequence {
  int episode_id = 0;
  nn::Mat features;              // rows = time steps
  std::vector<double> targets;   // hindsight alpha per step
  std::vector<bool> degenerate;  // excluded from the loss, kept for alignment
};

struct ArbTrainResult {
  nn::Model model;
  nn::TrainReport report;
};

/// Sequence-wise MSE on non-degenerate steps. When `init` is given training
/// starts from it (DAgger lineage); otherwise from a seeded initialization.
/// Every `validation_every`-th episode is held out (0 disables validation).
ArbTrainResult train_arbitration(std::span<const AlphaSequence> data, const ArbNetConfig& cfg,
                                 const nn::TrainHyper& hyper, const nn::Model* init = nullptr,
                                 int validation_every = 10);

}  // namespace arbiter
