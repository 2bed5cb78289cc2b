#include "arbiter/arbitration.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace arbiter;

namespace {

Vec2 polar(double angle, double r = 1.0) { return {r * std::cos(angle), r * std::sin(angle)}; }

// Independent angle oracle: acos of the normalized dot product, sign from the
// cross product.
double oracle_signed_angle(const Vec2& a, const Vec2& b) {
  const double c = std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0);
  const double cross = a.x() * b.y() - a.y() * b.x();
  const double ang = std::acos(c);
  return cross < 0.0 ? -ang : ang;
}

}  // namespace

TEST(SignedAngle, MatchesOracleOnRandomPairs) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ang(-kPi, kPi), mag(0.01, 2.0);
  for (int i = 0; i < 2000; ++i) {
    const Vec2 a = polar(ang(rng), mag(rng)), b = polar(ang(rng), mag(rng));
    EXPECT_NEAR(signed_angle(a, b), oracle_signed_angle(a, b), 1e-7);
  }
}

TEST(SignedAngle, OpposedVectorsGivePlusPi) {
  EXPECT_DOUBLE_EQ(signed_angle({1, 0}, {-1, 0}), kPi);
  EXPECT_DOUBLE_EQ(signed_angle({0, 1}, {0, -1}), kPi);
  EXPECT_THROW(signed_angle({0, 0}, {1, 0}), DegenerateInputError);
}

TEST(Blend, RotationalAlphaZeroReturnsUserCommandUnchanged) {
  const Vec2 a_u{0.13, -0.21};
  const Vec2 out = blend_rotational(a_u, {0.3, 0.1}, 0.0);
  EXPECT_EQ(out, a_u);
}

TEST(Blend, RotationalAlphaOneTakesRobotDirectionAndUserSpeed) {
  const Vec2 a_u{0.2, 0.05}, a_r{-0.1, 0.3};
  const Vec2 out = blend_rotational(a_u, a_r, 1.0);
  EXPECT_NEAR(out.norm(), a_u.norm(), 1e-15);
  EXPECT_NEAR(oracle_signed_angle(out, a_r), 0.0, 1e-7);
}

TEST(Blend, RotationalPreservesNormForAnyAlpha) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ang(-kPi, kPi), mag(0.01, 0.4), a01(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const Vec2 a_u = polar(ang(rng), mag(rng)), a_r = polar(ang(rng), mag(rng));
    EXPECT_NEAR(blend_rotational(a_u, a_r, a01(rng)).norm(), a_u.norm(), 1e-14);
  }
}

TEST(Blend, LinearMatchesConvexCombinationAndClips) {
  EXPECT_TRUE(blend_linear({0.1, 0.0}, {0.0, 0.1}, 0.25, 1.0).isApprox(Vec2{0.075, 0.025}));
  EXPECT_NEAR(blend_linear({0.4, 0.0}, {0.4, 0.0}, 0.5, 0.2).norm(), 0.2, 1e-15);
}

TEST(Blend, AlphaOutsideUnitIntervalIsRejected) {
  EXPECT_THROW(blend_linear({1, 0}, {0, 1}, 1.5, 1.0), ArgumentError);
  EXPECT_THROW(blend_rotational({1, 0}, {0, 1}, -0.1), ArgumentError);
  EXPECT_THROW(blend_rotational({1, 0}, {0, 1}, std::nan("")), ArgumentError);
}

TEST(Blend, DispatchClipsRotationalOutput) {
  const Vec2 out = blend(BlendMode::Rotational, {0.8, 0.0}, {0.0, 1.0}, 0.5, 0.4);
  EXPECT_NEAR(out.norm(), 0.4, 1e-15);
}

TEST(HindsightAlpha, RoundTripThroughRotationalBlend) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> ang(-kPi, kPi), mag(0.01, 0.4), a01(0.0, 1.0), th(0.01, kPi - 0.01);
  std::bernoulli_distribution sign(0.5);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const Vec2 a_u = polar(ang(rng), mag(rng));
    const double theta = sign(rng) ? th(rng) : -th(rng);
    const Vec2 a_r = rotate(a_u, theta).normalized() * mag(rng);
    const double alpha = a01(rng);
    const Vec2 a_s = blend_rotational(a_u, a_r, alpha);
    const AlphaValue rec = hindsight_alpha(a_u, a_r, a_s);
    ASSERT_FALSE(rec.degenerate);
    worst = std::max(worst, std::abs(rec.alpha - alpha));
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(HindsightAlpha, CaseTable) {
  const double th_ur = 0.8;
  const Vec2 a_u = polar(0.0, 0.3), a_r = polar(th_ur, 0.2);

  EXPECT_EQ(hindsight_alpha(a_u, a_r, a_u).alpha, 0.0);
  EXPECT_EQ(hindsight_alpha(a_u, a_r, a_r).alpha, 1.0);
  EXPECT_NEAR(hindsight_alpha(a_u, a_r, polar(0.3)).alpha, 0.3 / 0.8, 1e-12);

  // a_h on the far side of a_u: theta_uh = theta_rh - theta_ur, clipped to 0.
  const Vec2 below = polar(-0.3);
  auto g = blend_geometry(a_u, a_r, below);
  EXPECT_NEAR(g.theta_uh, g.theta_rh - g.theta_ur, 1e-12);
  EXPECT_EQ(hindsight_alpha(a_u, a_r, below).alpha, 0.0);

  // a_h beyond a_r: theta_uh = theta_ur + theta_rh, clipped to 1.
  const Vec2 beyond = polar(1.2);
  g = blend_geometry(a_u, a_r, beyond);
  EXPECT_NEAR(g.theta_uh, g.theta_ur + g.theta_rh, 1e-12);
  EXPECT_EQ(hindsight_alpha(a_u, a_r, beyond).alpha, 1.0);
}

TEST(HindsightAlpha, CollinearOrZeroInputsAreDegenerate) {
  EXPECT_TRUE(hindsight_alpha({1, 0}, {2, 0}, {0, 1}).degenerate);
  EXPECT_EQ(hindsight_alpha({1, 0}, {2, 0}, {0, 1}).alpha, 0.0);
  EXPECT_TRUE(hindsight_alpha({0, 0}, {1, 0}, {0, 1}).degenerate);
  EXPECT_TRUE(hindsight_alpha({1, 0}, {0, 1}, {0, 0}).degenerate);
}

TEST(TimidAlpha, RampValues) {
  EXPECT_EQ(timid_alpha(0.2).alpha, 0.0);
  EXPECT_EQ(timid_alpha(0.55).alpha, 0.0);
  EXPECT_NEAR(timid_alpha(0.70).alpha, 0.4, 1e-12);
  EXPECT_NEAR(timid_alpha(0.85).alpha, 0.8, 1e-12);
  EXPECT_NEAR(timid_alpha(1.0).alpha, 0.8, 1e-12);
  EXPECT_THROW(timid_params_from_json({{"c_lo", 0.9}, {"c_hi", 0.5}}), ConfigError);
}

TEST(ArbitrationNet, SpecRoundTripAndFeatureLayout) {
  ArbNetConfig cfg;
  const auto spec = arbitration_network_spec(cfg);
  EXPECT_EQ(spec.input_size(), 12);
  EXPECT_EQ(spec.output_size(), 1);
  const auto back = arb_config_from_spec(spec);
  EXPECT_EQ(back.hidden, cfg.hidden);

  ArbFeatureInput in{{0.1, 0.2}, {0.4, 0.0}, {0.0, -0.2}, {1.0, 2.0, 3.0, 4.0}, 0.7, true};
  const nn::Vec f = arbitration_features(in, cfg);
  nn::Vec expected(12);
  expected << 0.1, 0.2, 1.0, 0.0, 0.0, -0.5, 0.1, 0.2, 0.3, 0.4, 0.7, 1.0;
  EXPECT_TRUE(f.isApprox(expected, 1e-15));
  in.windowed_scores.pop_back();
  EXPECT_THROW(arbitration_features(in, cfg), SpecError);
}

TEST(ArbitrationNet, PredictorMatchesFullHistoryAndStaysInUnitInterval) {
  const auto model = nn::init_model(arbitration_network_spec({}), 5);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  nn::Mat history(25, 12);
  for (Eigen::Index i = 0; i < history.size(); ++i) history.data()[i] = n01(rng);
  ArbitrationPredictor pred(model);
  for (Eigen::Index t = 0; t < history.rows(); ++t) {
    const double a = pred.step(history.row(t).transpose()).alpha;
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
    EXPECT_EQ(a, learned_alpha(model, history.topRows(t + 1)).alpha);
  }
}

TEST(ArbitrationNet, TrainingReducesLossAndIgnoresDegenerateSteps) {
  // Target alpha depends on the grabbed flag; degenerate rows carry garbage.
  std::vector<AlphaSequence> data;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int e = 0; e < 30; ++e) {
    AlphaSequence s;
    s.episode_id = e;
    s.features = nn::Mat(12, 12);
    for (int t = 0; t < 12; ++t) {
      for (int c = 0; c < 12; ++c) s.features(t, c) = u(rng);
      const bool grabbed = t >= 6;
      s.features(t, 11) = grabbed ? 1.0 : 0.0;
      const bool degenerate = t % 5 == 4;
      s.targets.push_back(degenerate ? 0.5 : (grabbed ? 0.9 : 0.1));
      s.degenerate.push_back(degenerate);
    }
    data.push_back(std::move(s));
  }
  nn::TrainHyper hyper;
  hyper.epochs = 40;
  hyper.adam.lr = 5e-3;
  const auto res = train_arbitration(data, {}, hyper);
  EXPECT_LT(res.report.best_val_loss, 0.1 * res.report.initial_val_loss);

  const auto warm = train_arbitration(data, {}, hyper, &res.model);
  EXPECT_LE(warm.report.initial_val_loss, res.report.best_val_loss + 1e-12);
  EXPECT_THROW(train_arbitration({}, {}, hyper), TrainingError);
}
