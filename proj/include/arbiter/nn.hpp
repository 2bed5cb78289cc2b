#pragma once

// Small deterministic neural network library with hand-derived gradients.
//
// A network is an ordered list of layers applied to one input vector per time
// step. LSTM layers carry state from step to step; all other layers are
// stateless, so a network without LSTM layers treats the rows of an input
// matrix as an independent batch.

#include "arbiter/common.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace arbiter::nn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Activation { Linear, Tanh, Sigmoid };

struct Dense {
  int in = 0;
  int out = 0;
  Activation activation = Activation::Linear;
};

struct LstmCell {
  int in = 0;
  int hidden = 0;
};

// Input is (in_ch, in_h, in_w) flattened channel-major; output likewise.
struct TransposedConv2d {
  int in_ch = 1;
  int out_ch = 1;
  int kernel = 4;
  int stride = 2;
  int padding = 1;
  int in_h = 1;
  int in_w = 1;

  int out_h() const { return (in_h - 1) * stride + kernel - 2 * padding; }
  int out_w() const { return (in_w - 1) * stride + kernel - 2 * padding; }
  int in_size() const { return in_ch * in_h * in_w; }
  int out_size() const { return out_ch * out_h() * out_w(); }
};

struct Softmax2d {
  int height = 1;
  int width = 1;
};

struct SigmoidLayer {
  int size = 0;
};

struct TanhLayer {
  int size = 0;
};

using LayerSpec = std::variant<Dense, LstmCell, TransposedConv2d, Softmax2d, SigmoidLayer, TanhLayer>;

int layer_input_size(const LayerSpec& l);
int layer_output_size(const LayerSpec& l);

struct NetworkSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  json meta = json::object();  // free-form model configuration (v_max, window, ...)

  int input_size() const;
  int output_size() const;
  bool is_recurrent() const;
  /// Throws SpecError if adjacent layers do not compose.
  void validate() const;

  json to_json() const;
  static NetworkSpec from_json(const json& j);
  bool operator==(const NetworkSpec& other) const { return to_json() == other.to_json(); }
};

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<std::size_t> shape);
  std::size_t size() const { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

using NamedTensors = std::map<std::string, Tensor>;

NamedTensors zeros_like(const NamedTensors& t);
/// acc += scale * g, tensor by tensor.
void accumulate(NamedTensors& acc, const NamedTensors& g, double scale = 1.0);
void scale(NamedTensors& t, double factor);
double squared_norm(const NamedTensors& t);

struct Model {
  NetworkSpec spec;
  NamedTensors params;
};

/// Parameter names and shapes implied by a spec, in initialization order.
std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_layout(const NetworkSpec& spec);

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a seeded generator.
Model init_model(const NetworkSpec& spec, std::uint64_t seed);

struct RecurrentState {
  std::vector<Vec> h;  // per layer; empty for stateless layers
  std::vector<Vec> c;
};

RecurrentState initial_state(const NetworkSpec& spec);

struct StepCache {
  std::vector<Vec> inputs;   // input to each layer
  std::vector<Vec> outputs;  // output of each layer
  std::vector<Vec> gates;    // LSTM post-activation gates [i f g o]
  std::vector<Vec> cell_prev;
  std::vector<Vec> cell;
  std::vector<Vec> hidden_prev;
};

struct SequenceCache {
  std::vector<StepCache> steps;
};

/// One time step. Advances `state`; fills `cache` when non-null.
Vec step(const Model& model, RecurrentState& state, const Vec& input, StepCache* cache = nullptr);

/// Full sequence from a zero recurrent state; rows of `inputs` are time steps.
/// Identical arithmetic to repeated step() calls.
Mat forward(const Model& model, const Mat& inputs, SequenceCache* cache = nullptr);

/// Exact gradients of a scalar loss given dLoss/dOutput per row, including
/// backpropagation through time. Throws ArgumentError when the cache does not
/// match the gradient.
NamedTensors backward(const Model& model, const SequenceCache& cache, const Mat& output_grad);

// Losses return the mean over contributing rows and write dLoss/dPrediction.

/// Mean over rows with weight > 0 of the squared error summed over columns.
/// `row_weights` may be empty (all rows count).
double mse_loss(const Mat& pred, const Mat& target, const std::vector<double>& row_weights, Mat* grad);

/// Mean over rows of -sum target * log(prob) for probability rows.
double cross_entropy_loss(const Mat& probs, const Mat& target, Mat* grad);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  NamedTensors m;
  NamedTensors v;
  std::uint64_t step = 0;
};

AdamState adam_init(const Model& model, AdamConfig config = {});

/// Bias-corrected Adam update in place. Throws TrainingError naming the first
/// parameter with a non-finite gradient; nothing is modified in that case.
void adam_step(Model& model, const NamedTensors& grads, AdamState& state);

/// Self-describing JSON weight file (format tag, version, spec, tensors).
/// Doubles are written with round-trip precision.
std::string serialize_model(const Model& model);
void save_weights(const Model& model, const std::filesystem::path& path);

/// Throws FormatError on malformed/truncated files, unsupported versions, or
/// tensors that disagree with the stored spec.
Model parse_model(const std::string& text);
Model load_weights(const std::filesystem::path& path);
/// As above, additionally requiring the stored spec to equal `expected`.
Model load_weights(const std::filesystem::path& path, const NetworkSpec& expected);

}  // namespace arbiter::nn
