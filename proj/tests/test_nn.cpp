#include "arbiter/arbitration.hpp"
#include "arbiter/intent.hpp"
#include "arbiter/motion.hpp"
#include "arbiter/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

using namespace arbiter;
using namespace arbiter::nn;

namespace {

Mat random_mat(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01;
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * n01(rng);
  return m;
}

double weighted_output(const Model& m, const Mat& x, const Mat& w) { return (forward(m, x).array() * w.array()).sum(); }

// Central-difference check of d(sum w * output)/d(param) on up to
// `per_tensor` entries of every parameter tensor. Returns the worst relative
// error.
double gradient_check(Model model, const Mat& x, std::uint64_t seed, int per_tensor = 40) {
  std::mt19937_64 rng(seed);
  const Mat w = random_mat(x.rows(), model.spec.output_size(), rng);
  SequenceCache cache;
  forward(model, x, &cache);
  const NamedTensors grads = backward(model, cache, w);

  const double h = 1e-5;
  double worst = 0.0;
  for (auto& [name, tensor] : model.params) {
    std::vector<std::size_t> idx(tensor.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    std::shuffle(idx.begin(), idx.end(), rng);
    if (idx.size() > static_cast<std::size_t>(per_tensor)) idx.resize(static_cast<std::size_t>(per_tensor));
    for (std::size_t k : idx) {
      const double orig = tensor.data[k];
      tensor.data[k] = orig + h;
      const double up = weighted_output(model, x, w);
      tensor.data[k] = orig - h;
      const double down = weighted_output(model, x, w);
      tensor.data[k] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads.at(name).data[k];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

NetworkSpec single(std::vector<LayerSpec> layers) {
  NetworkSpec s;
  s.name = "probe";
  s.layers = std::move(layers);
  s.validate();
  return s;
}

void expect_gradients(const NetworkSpec& spec, int steps, int per_tensor = 40) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed * 97);
    const Model m = init_model(spec, seed);
    const Mat x = random_mat(steps, spec.input_size(), rng);
    EXPECT_LE(gradient_check(m, x, seed, per_tensor), 1e-4) << spec.name << " seed " << seed;
  }
}

}  // namespace

TEST(GradientCheck, DenseEveryActivation) {
  for (auto act : {Activation::Linear, Activation::Tanh, Activation::Sigmoid})
    expect_gradients(single({Dense{5, 4, act}}), 3);
}

TEST(GradientCheck, LstmThroughTime) { expect_gradients(single({LstmCell{3, 5}, Dense{5, 2, Activation::Linear}}), 7); }

TEST(GradientCheck, TransposedConv) {
  TransposedConv2d t{2, 3, 4, 2, 1, 3, 3};
  expect_gradients(single({Dense{4, t.in_size(), Activation::Tanh}, t}), 2);
}

TEST(GradientCheck, Softmax2d) {
  expect_gradients(single({Dense{3, 12, Activation::Linear}, Softmax2d{3, 4}}), 3);
}

TEST(GradientCheck, SigmoidAndTanhLayers) {
  expect_gradients(single({Dense{3, 4, Activation::Linear}, SigmoidLayer{4}}), 3);
  expect_gradients(single({Dense{3, 4, Activation::Linear}, TanhLayer{4}}), 3);
}

TEST(GradientCheck, IntentNetwork) { expect_gradients(intent_network_spec({}), 4, 25); }

TEST(GradientCheck, MotionNetworks) {
  expect_gradients(motion_network_spec({}), 6);
  MotionNetConfig obstacles;
  obstacles.max_obstacles = 2;
  expect_gradients(motion_network_spec(obstacles), 6);
}

TEST(GradientCheck, ArbitrationNetwork) { expect_gradients(arbitration_network_spec({}), 8); }

TEST(Forward, SequenceEqualsRepeatedStepsBitwise) {
  const auto spec = intent_network_spec({});
  const Model m = init_model(spec, 3);
  std::mt19937_64 rng(4);
  const Mat x = random_mat(9, spec.input_size(), rng);
  const Mat full = forward(m, x);
  RecurrentState st = initial_state(spec);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const Vec y = step(m, st, x.row(t).transpose());
    for (Eigen::Index k = 0; k < y.size(); ++k) ASSERT_EQ(y(k), full(t, k));
  }
}

TEST(Forward, StatelessRowsAreIndependent) {
  const auto spec = motion_network_spec({});
  const Model m = init_model(spec, 3);
  std::mt19937_64 rng(5);
  const Mat x = random_mat(6, spec.input_size(), rng);
  const Mat full = forward(m, x);
  const Mat last = forward(m, x.bottomRows(1));
  EXPECT_EQ(full.bottomRows(1), last);
}

TEST(Forward, SoftmaxHeatmapSumsToOneEvenForExtremeInputs) {
  const auto spec = intent_network_spec({});
  Model m = init_model(spec, 1);
  for (auto& [name, t] : m.params)
    for (auto& v : t.data) v *= 40.0;
  std::mt19937_64 rng(8);
  const Mat out = forward(m, random_mat(5, 4, rng, 50.0));
  for (Eigen::Index t = 0; t < out.rows(); ++t) {
    EXPECT_NEAR(out.row(t).sum(), 1.0, 1e-9);
    EXPECT_GE(out.row(t).minCoeff(), 0.0);
  }
}

TEST(Init, SeededAndBounded) {
  const auto spec = arbitration_network_spec({});
  const Model a = init_model(spec, 42), b = init_model(spec, 42), c = init_model(spec, 43);
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params, c.params);
  const double bound = 1.0 / std::sqrt(12.0 + 32.0);
  for (double v : a.params.at("l0.weight").data) EXPECT_LE(std::abs(v), bound);
  EXPECT_EQ(a.params.at("l0.weight").shape, (std::vector<std::size_t>{128, 44}));
}

TEST(Losses, MseMatchesHandComputation) {
  Mat p(2, 2), t(2, 2), g;
  p << 1, 2, 3, 4;
  t << 0, 2, 3, 2;
  EXPECT_DOUBLE_EQ(mse_loss(p, t, {}, &g), (1.0 + 4.0) / 2.0);
  EXPECT_DOUBLE_EQ(g(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g(1, 1), 2.0);
  EXPECT_DOUBLE_EQ(mse_loss(p, t, {1.0, 0.0}, &g), 1.0);
  EXPECT_DOUBLE_EQ(g(1, 1), 0.0);
}

TEST(Losses, CrossEntropyMatchesHandComputation) {
  Mat p(1, 3), t(1, 3), g;
  p << 0.2, 0.3, 0.5;
  t << 0.0, 1.0, 0.0;
  EXPECT_NEAR(cross_entropy_loss(p, t, &g), -std::log(0.3), 1e-15);
  EXPECT_NEAR(g(0, 1), -1.0 / 0.3, 1e-12);
  EXPECT_EQ(g(0, 0), 0.0);
}

TEST(Adam, FirstStepMovesEachParameterByLearningRate) {
  NetworkSpec spec = single({Dense{1, 1, Activation::Linear}});
  Model m = init_model(spec, 1);
  const double w0 = m.params.at("l0.weight").data[0], b0 = m.params.at("l0.bias").data[0];
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.eps = 0.0;
  AdamState st = adam_init(m, cfg);
  NamedTensors g = zeros_like(m.params);
  g.at("l0.weight").data[0] = 3.0;
  g.at("l0.bias").data[0] = -0.5;
  adam_step(m, g, st);
  EXPECT_NEAR(m.params.at("l0.weight").data[0], w0 - 0.1, 1e-15);
  EXPECT_NEAR(m.params.at("l0.bias").data[0], b0 + 0.1, 1e-15);
  // Second identical gradient: bias-corrected moments are unchanged.
  adam_step(m, g, st);
  EXPECT_NEAR(m.params.at("l0.weight").data[0], w0 - 0.2, 1e-14);
}

TEST(Adam, NonFiniteGradientNamesParameterAndLeavesModelUntouched) {
  Model m = init_model(arbitration_network_spec({}), 1);
  const Model before = m;
  AdamState st = adam_init(m);
  NamedTensors g = zeros_like(m.params);
  g.at("l2.bias").data[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(m, g, st);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("l2.bias"), std::string::npos);
  }
  EXPECT_EQ(m.params, before.params);
}

TEST(Adam, MinimizesQuadratic) {
  NetworkSpec spec = single({Dense{1, 1, Activation::Linear}});
  Model m = init_model(spec, 2);
  AdamConfig cfg;
  cfg.lr = 0.05;
  AdamState st = adam_init(m, cfg);
  for (int i = 0; i < 2000; ++i) {
    NamedTensors g = zeros_like(m.params);
    g.at("l0.weight").data[0] = 2.0 * (m.params.at("l0.weight").data[0] - 1.5);
    g.at("l0.bias").data[0] = 2.0 * (m.params.at("l0.bias").data[0] + 0.5);
    adam_step(m, g, st);
  }
  EXPECT_NEAR(m.params.at("l0.weight").data[0], 1.5, 1e-3);
  EXPECT_NEAR(m.params.at("l0.bias").data[0], -0.5, 1e-3);
}

class WeightFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() / ("arbiter_nn_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(WeightFiles, RoundTripIsBitwise) {
  const Model m = init_model(intent_network_spec({}), 17);
  save_weights(m, dir_ / "w.json");
  const Model back = load_weights(dir_ / "w.json", m.spec);
  EXPECT_TRUE(back.spec == m.spec);
  EXPECT_EQ(back.params, m.params);
  EXPECT_EQ(serialize_model(back), serialize_model(m));
}

TEST_F(WeightFiles, CorruptOrMismatchedFilesAreRejected) {
  const Model m = init_model(arbitration_network_spec({}), 1);
  const std::string text = serialize_model(m);

  EXPECT_THROW(parse_model(text.substr(0, text.size() / 2)), FormatError);
  EXPECT_THROW(parse_model("{\"format\":\"something-else\"}"), FormatError);

  json doc = json::parse(text);
  doc["version"] = 99;
  EXPECT_THROW(parse_model(doc.dump()), FormatError);

  doc = json::parse(text);
  doc["tensors"][0]["data"].erase(0);
  EXPECT_THROW(parse_model(doc.dump()), FormatError);

  doc = json::parse(text);
  doc["tensors"].erase(1);
  EXPECT_THROW(parse_model(doc.dump()), FormatError);

  save_weights(m, dir_ / "arb.json");
  EXPECT_THROW(load_weights(dir_ / "arb.json", motion_network_spec({})), FormatError);
  EXPECT_THROW(load_weights(dir_ / "missing.json"), Error);
}
