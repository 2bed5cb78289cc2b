#include "arbiter/nn.hpp"

#include <cmath>
#include <random>

namespace arbiter::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Vec>;
using ConstMapVec = Eigen::Map<const Vec>;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string weight_name(std::size_t layer) { return "l" + std::to_string(layer) + ".weight"; }
std::string bias_name(std::size_t layer) { return "l" + std::to_string(layer) + ".bias"; }

const Tensor& param(const Model& m, const std::string& name) {
  auto it = m.params.find(name);
  if (it == m.params.end()) throw SpecError("model is missing parameter '" + name + "'");
  return it->second;
}

ConstMapMat as_matrix(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return ConstMapMat(t.data.data(), rows, cols);
}
MapMat as_matrix(Tensor& t, Eigen::Index rows, Eigen::Index cols) { return MapMat(t.data.data(), rows, cols); }
ConstMapVec as_vector(const Tensor& t) { return ConstMapVec(t.data.data(), static_cast<Eigen::Index>(t.size())); }
MapVec as_vector(Tensor& t) { return MapVec(t.data.data(), static_cast<Eigen::Index>(t.size())); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec apply_activation(Activation a, const Vec& z) {
  switch (a) {
    case Activation::Linear: return z;
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Sigmoid: return z.unaryExpr([](double v) { return sigmoid(v); });
  }
  return z;
}

// d(act)/dz expressed through the activation output y.
Vec activation_slope(Activation a, const Vec& y) {
  switch (a) {
    case Activation::Linear: return Vec::Ones(y.size());
    case Activation::Tanh: return (1.0 - y.array().square()).matrix();
    case Activation::Sigmoid: return (y.array() * (1.0 - y.array())).matrix();
  }
  return Vec::Ones(y.size());
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

Activation activation_from_name(const std::string& s) {
  if (s == "linear") return Activation::Linear;
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw FormatError("unknown activation '" + s + "'");
}

Vec softmax(const Vec& x) {
  const double mx = x.maxCoeff();
  Vec e = (x.array() - mx).exp().matrix();
  return e / e.sum();
}

Vec tconv_forward(const TransposedConv2d& s, const Tensor& w, const Tensor& b, const Vec& in) {
  const int oh = s.out_h(), ow = s.out_w(), k = s.kernel;
  Vec out(s.out_size());
  for (int oc = 0; oc < s.out_ch; ++oc) out.segment(oc * oh * ow, oh * ow).setConstant(b.data[oc]);
  const double* wd = w.data.data();
  for (int ic = 0; ic < s.in_ch; ++ic) {
    for (int i = 0; i < s.in_h; ++i) {
      for (int j = 0; j < s.in_w; ++j) {
        const double v = in((ic * s.in_h + i) * s.in_w + j);
        if (v == 0.0) continue;
        for (int oc = 0; oc < s.out_ch; ++oc) {
          const double* wk = wd + ((ic * s.out_ch + oc) * k) * k;
          double* o = out.data() + oc * oh * ow;
          for (int ki = 0; ki < k; ++ki) {
            const int oi = i * s.stride - s.padding + ki;
            if (oi < 0 || oi >= oh) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int oj = j * s.stride - s.padding + kj;
              if (oj < 0 || oj >= ow) continue;
              o[oi * ow + oj] += v * wk[ki * k + kj];
            }
          }
        }
      }
    }
  }
  return out;
}

// Returns dLoss/dInput; accumulates kernel and bias gradients.
Vec tconv_backward(const TransposedConv2d& s, const Tensor& w, const Vec& in, const Vec& g_out, Tensor& gw,
                   Tensor& gb) {
  const int oh = s.out_h(), ow = s.out_w(), k = s.kernel;
  for (int oc = 0; oc < s.out_ch; ++oc) gb.data[oc] += g_out.segment(oc * oh * ow, oh * ow).sum();
  Vec g_in = Vec::Zero(s.in_size());
  const double* wd = w.data.data();
  double* gwd = gw.data.data();
  for (int ic = 0; ic < s.in_ch; ++ic) {
    for (int i = 0; i < s.in_h; ++i) {
      for (int j = 0; j < s.in_w; ++j) {
        const int in_idx = (ic * s.in_h + i) * s.in_w + j;
        const double v = in(in_idx);
        double acc = 0.0;
        for (int oc = 0; oc < s.out_ch; ++oc) {
          const int base = ((ic * s.out_ch + oc) * k) * k;
          const double* go = g_out.data() + oc * oh * ow;
          for (int ki = 0; ki < k; ++ki) {
            const int oi = i * s.stride - s.padding + ki;
            if (oi < 0 || oi >= oh) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int oj = j * s.stride - s.padding + kj;
              if (oj < 0 || oj >= ow) continue;
              const double g = go[oi * ow + oj];
              gwd[base + ki * k + kj] += v * g;
              acc += wd[base + ki * k + kj] * g;
            }
          }
        }
        g_in(in_idx) = acc;
      }
    }
  }
  return g_in;
}

}  // namespace

int layer_input_size(const LayerSpec& l) {
  return std::visit(Overloaded{
                        [](const Dense& d) { return d.in; },
                        [](const LstmCell& c) { return c.in; },
                        [](const TransposedConv2d& t) { return t.in_size(); },
                        [](const Softmax2d& s) { return s.height * s.width; },
                        [](const SigmoidLayer& s) { return s.size; },
                        [](const TanhLayer& s) { return s.size; },
                    },
                    l);
}

int layer_output_size(const LayerSpec& l) {
  return std::visit(Overloaded{
                        [](const Dense& d) { return d.out; },
                        [](const LstmCell& c) { return c.hidden; },
                        [](const TransposedConv2d& t) { return t.out_size(); },
                        [](const Softmax2d& s) { return s.height * s.width; },
                        [](const SigmoidLayer& s) { return s.size; },
                        [](const TanhLayer& s) { return s.size; },
                    },
                    l);
}

int NetworkSpec::input_size() const { return layers.empty() ? 0 : layer_input_size(layers.front()); }
int NetworkSpec::output_size() const { return layers.empty() ? 0 : layer_output_size(layers.back()); }

bool NetworkSpec::is_recurrent() const {
  for (const auto& l : layers)
    if (std::holds_alternative<LstmCell>(l)) return true;
  return false;
}

void NetworkSpec::validate() const {
  if (layers.empty()) throw SpecError("network '" + name + "' has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layer_input_size(layers[i]) <= 0 || layer_output_size(layers[i]) <= 0)
      throw SpecError("layer " + std::to_string(i) + " of '" + name + "' has a non-positive size");
    if (const auto* t = std::get_if<TransposedConv2d>(&layers[i])) {
      if (t->kernel < 1 || t->stride < 1 || t->padding < 0 || t->out_h() < 1 || t->out_w() < 1)
        throw SpecError("invalid transposed convolution geometry");
    }
    if (i > 0 && layer_output_size(layers[i - 1]) != layer_input_size(layers[i]))
      throw SpecError("layer " + std::to_string(i) + " of '" + name + "' expects " +
                      std::to_string(layer_input_size(layers[i])) + " inputs but receives " +
                      std::to_string(layer_output_size(layers[i - 1])));
  }
}

json NetworkSpec::to_json() const {
  json ls = json::array();
  for (const auto& l : layers) {
    ls.push_back(std::visit(
        Overloaded{
            [](const Dense& d) -> json {
              return {{"type", "dense"}, {"in", d.in}, {"out", d.out}, {"activation", activation_name(d.activation)}};
            },
            [](const LstmCell& c) -> json { return {{"type", "lstm"}, {"in", c.in}, {"hidden", c.hidden}}; },
            [](const TransposedConv2d& t) -> json {
              return {{"type", "transposed_conv2d"}, {"in_ch", t.in_ch},   {"out_ch", t.out_ch},
                      {"kernel", t.kernel},          {"stride", t.stride}, {"padding", t.padding},
                      {"in_h", t.in_h},              {"in_w", t.in_w}};
            },
            [](const Softmax2d& s) -> json { return {{"type", "softmax2d"}, {"height", s.height}, {"width", s.width}}; },
            [](const SigmoidLayer& s) -> json { return {{"type", "sigmoid"}, {"size", s.size}}; },
            [](const TanhLayer& s) -> json { return {{"type", "tanh"}, {"size", s.size}}; },
        },
        l));
  }
  return {{"name", name}, {"layers", ls}, {"meta", meta}};
}

NetworkSpec NetworkSpec::from_json(const json& j) {
  NetworkSpec spec;
  try {
    spec.name = j.at("name").get<std::string>();
    spec.meta = j.value("meta", json::object());
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "dense") {
        spec.layers.push_back(Dense{l.at("in"), l.at("out"), activation_from_name(l.at("activation"))});
      } else if (type == "lstm") {
        spec.layers.push_back(LstmCell{l.at("in"), l.at("hidden")});
      } else if (type == "transposed_conv2d") {
        spec.layers.push_back(TransposedConv2d{l.at("in_ch"), l.at("out_ch"), l.at("kernel"), l.at("stride"),
                                               l.at("padding"), l.at("in_h"), l.at("in_w")});
      } else if (type == "softmax2d") {
        spec.layers.push_back(Softmax2d{l.at("height"), l.at("width")});
      } else if (type == "sigmoid") {
        spec.layers.push_back(SigmoidLayer{l.at("size")});
      } else if (type == "tanh") {
        spec.layers.push_back(TanhLayer{l.at("size")});
      } else {
        throw FormatError("unknown layer type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed network spec: ") + e.what());
  }
  try {
    spec.validate();
  } catch (const SpecError& e) {
    throw FormatError(e.what());
  }
  return spec;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return Tensor{std::move(shape), std::vector<double>(n, 0.0)};
}

NamedTensors zeros_like(const NamedTensors& t) {
  NamedTensors out;
  for (const auto& [name, tensor] : t) out.emplace(name, Tensor::zeros(tensor.shape));
  return out;
}

void accumulate(NamedTensors& acc, const NamedTensors& g, double s) {
  for (auto& [name, tensor] : acc) {
    const auto& src = g.at(name).data;
    for (std::size_t i = 0; i < tensor.data.size(); ++i) tensor.data[i] += s * src[i];
  }
}

void scale(NamedTensors& t, double factor) {
  for (auto& [name, tensor] : t)
    for (auto& v : tensor.data) v *= factor;
}

double squared_norm(const NamedTensors& t) {
  double s = 0.0;
  for (const auto& [name, tensor] : t)
    for (double v : tensor.data) s += v * v;
  return s;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_layout(const NetworkSpec& spec) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (const auto* d = std::get_if<Dense>(&l)) {
      out.push_back({weight_name(i), {std::size_t(d->out), std::size_t(d->in)}});
      out.push_back({bias_name(i), {std::size_t(d->out)}});
    } else if (const auto* c = std::get_if<LstmCell>(&l)) {
      out.push_back({weight_name(i), {std::size_t(4 * c->hidden), std::size_t(c->in + c->hidden)}});
      out.push_back({bias_name(i), {std::size_t(4 * c->hidden)}});
    } else if (const auto* t = std::get_if<TransposedConv2d>(&l)) {
      out.push_back({weight_name(i),
                     {std::size_t(t->in_ch), std::size_t(t->out_ch), std::size_t(t->kernel), std::size_t(t->kernel)}});
      out.push_back({bias_name(i), {std::size_t(t->out_ch)}});
    }
  }
  return out;
}

Model init_model(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m{spec, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    int fan_in = 0;
    if (const auto* d = std::get_if<Dense>(&l)) fan_in = d->in;
    else if (const auto* c = std::get_if<LstmCell>(&l)) fan_in = c->in + c->hidden;
    else if (const auto* t = std::get_if<TransposedConv2d>(&l)) fan_in = t->in_ch * t->kernel * t->kernel;
    else continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (const auto& [name, shape] : parameter_layout(spec)) {
      if (name != weight_name(i) && name != bias_name(i)) continue;
      Tensor t = Tensor::zeros(shape);
      for (auto& v : t.data) v = u(rng);
      m.params.emplace(name, std::move(t));
    }
  }
  return m;
}

RecurrentState initial_state(const NetworkSpec& spec) {
  RecurrentState s;
  s.h.resize(spec.layers.size());
  s.c.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (const auto* c = std::get_if<LstmCell>(&spec.layers[i])) {
      s.h[i] = Vec::Zero(c->hidden);
      s.c[i] = Vec::Zero(c->hidden);
    }
  }
  return s;
}

Vec step(const Model& model, RecurrentState& state, const Vec& input, StepCache* cache) {
  const auto& layers = model.spec.layers;
  if (input.size() != model.spec.input_size())
    throw SpecError("network '" + model.spec.name + "' expects " + std::to_string(model.spec.input_size()) +
                    " inputs, got " + std::to_string(input.size()));
  if (state.h.size() != layers.size()) throw SpecError("recurrent state does not match network");
  if (cache) {
    const auto n = layers.size();
    cache->inputs.resize(n);
    cache->outputs.resize(n);
    cache->gates.resize(n);
    cache->cell_prev.resize(n);
    cache->cell.resize(n);
    cache->hidden_prev.resize(n);
  }

  Vec x = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (cache) cache->inputs[i] = x;
    Vec y;
    if (const auto* d = std::get_if<Dense>(&layers[i])) {
      const auto W = as_matrix(param(model, weight_name(i)), d->out, d->in);
      const auto b = as_vector(param(model, bias_name(i)));
      Vec z = W * x + b;
      y = apply_activation(d->activation, z);
    } else if (const auto* c = std::get_if<LstmCell>(&layers[i])) {
      const int H = c->hidden;
      const auto W = as_matrix(param(model, weight_name(i)), 4 * H, c->in + H);
      const auto b = as_vector(param(model, bias_name(i)));
      Vec z = W.leftCols(c->in) * x + W.rightCols(H) * state.h[i] + b;
      Vec gates(4 * H);
      for (int k = 0; k < H; ++k) {
        gates(k) = sigmoid(z(k));                  // input
        gates(H + k) = sigmoid(z(H + k));          // forget
        gates(2 * H + k) = std::tanh(z(2 * H + k));  // candidate
        gates(3 * H + k) = sigmoid(z(3 * H + k));  // output
      }
      Vec cell = gates.segment(H, H).cwiseProduct(state.c[i]) + gates.head(H).cwiseProduct(gates.segment(2 * H, H));
      y = gates.tail(H).cwiseProduct(cell.array().tanh().matrix());
      if (cache) {
        cache->gates[i] = gates;
        cache->cell_prev[i] = state.c[i];
        cache->hidden_prev[i] = state.h[i];
        cache->cell[i] = cell;
      }
      state.c[i] = std::move(cell);
      state.h[i] = y;
    } else if (const auto* t = std::get_if<TransposedConv2d>(&layers[i])) {
      y = tconv_forward(*t, param(model, weight_name(i)), param(model, bias_name(i)), x);
    } else if (std::holds_alternative<Softmax2d>(layers[i])) {
      y = softmax(x);
    } else if (std::holds_alternative<SigmoidLayer>(layers[i])) {
      y = apply_activation(Activation::Sigmoid, x);
    } else if (std::holds_alternative<TanhLayer>(layers[i])) {
      y = apply_activation(Activation::Tanh, x);
    }
    if (cache) cache->outputs[i] = y;
    x = std::move(y);
  }
  return x;
}

Mat forward(const Model& model, const Mat& inputs, SequenceCache* cache) {
  if (inputs.cols() != model.spec.input_size())
    throw SpecError("network '" + model.spec.name + "' expects " + std::to_string(model.spec.input_size()) +
                    " input columns, got " + std::to_string(inputs.cols()));
  RecurrentState state = initial_state(model.spec);
  Mat out(inputs.rows(), model.spec.output_size());
  if (cache) cache->steps.assign(static_cast<std::size_t>(inputs.rows()), {});
  for (Eigen::Index t = 0; t < inputs.rows(); ++t) {
    const Vec x = inputs.row(t).transpose();
    out.row(t) = step(model, state, x, cache ? &cache->steps[static_cast<std::size_t>(t)] : nullptr).transpose();
  }
  return out;
}

NamedTensors backward(const Model& model, const SequenceCache& cache, const Mat& output_grad) {
  const auto& layers = model.spec.layers;
  if (cache.steps.empty() || static_cast<Eigen::Index>(cache.steps.size()) != output_grad.rows())
    throw ArgumentError("backward called without a matching forward cache");
  if (output_grad.cols() != model.spec.output_size()) throw ArgumentError("output gradient has the wrong width");
  for (const auto& s : cache.steps)
    if (s.inputs.size() != layers.size()) throw ArgumentError("forward cache is incomplete");

  NamedTensors grads = zeros_like(model.params);
  // Gradients flowing backwards in time into each LSTM layer's state.
  std::vector<Vec> dh_next(layers.size()), dc_next(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (const auto* c = std::get_if<LstmCell>(&layers[i])) {
      dh_next[i] = Vec::Zero(c->hidden);
      dc_next[i] = Vec::Zero(c->hidden);
    }
  }

  for (auto t = static_cast<Eigen::Index>(cache.steps.size()) - 1; t >= 0; --t) {
    const StepCache& sc = cache.steps[static_cast<std::size_t>(t)];
    Vec g = output_grad.row(t).transpose();
    for (auto ii = static_cast<std::ptrdiff_t>(layers.size()) - 1; ii >= 0; --ii) {
      const auto i = static_cast<std::size_t>(ii);
      const Vec& x = sc.inputs[i];
      const Vec& y = sc.outputs[i];
      if (const auto* d = std::get_if<Dense>(&layers[i])) {
        const Vec dz = g.cwiseProduct(activation_slope(d->activation, y));
        auto gW = as_matrix(grads.at(weight_name(i)), d->out, d->in);
        gW.noalias() += dz * x.transpose();
        as_vector(grads.at(bias_name(i))) += dz;
        const auto W = as_matrix(param(model, weight_name(i)), d->out, d->in);
        g = W.transpose() * dz;
      } else if (const auto* c = std::get_if<LstmCell>(&layers[i])) {
        const int H = c->hidden;
        const Vec& gates = sc.gates[i];
        const auto ig = gates.head(H).array();
        const auto fg = gates.segment(H, H).array();
        const auto cg = gates.segment(2 * H, H).array();
        const auto og = gates.tail(H).array();
        const Eigen::ArrayXd tanh_c = sc.cell[i].array().tanh();

        const Eigen::ArrayXd dh = g.array() + dh_next[i].array();
        const Eigen::ArrayXd dc = dc_next[i].array() + dh * og * (1.0 - tanh_c.square());
        Vec dz(4 * H);
        dz.head(H) = (dc * cg * ig * (1.0 - ig)).matrix();
        dz.segment(H, H) = (dc * sc.cell_prev[i].array() * fg * (1.0 - fg)).matrix();
        dz.segment(2 * H, H) = (dc * ig * (1.0 - cg.square())).matrix();
        dz.tail(H) = (dh * tanh_c * og * (1.0 - og)).matrix();

        auto gW = as_matrix(grads.at(weight_name(i)), 4 * H, c->in + H);
        gW.leftCols(c->in).noalias() += dz * x.transpose();
        gW.rightCols(H).noalias() += dz * sc.hidden_prev[i].transpose();
        as_vector(grads.at(bias_name(i))) += dz;

        const auto W = as_matrix(param(model, weight_name(i)), 4 * H, c->in + H);
        dh_next[i] = W.rightCols(H).transpose() * dz;
        dc_next[i] = (dc * fg).matrix();
        g = W.leftCols(c->in).transpose() * dz;
      } else if (const auto* tc = std::get_if<TransposedConv2d>(&layers[i])) {
        g = tconv_backward(*tc, param(model, weight_name(i)), x, g, grads.at(weight_name(i)),
                           grads.at(bias_name(i)));
      } else if (std::holds_alternative<Softmax2d>(layers[i])) {
        const double dot = y.dot(g);
        g = y.cwiseProduct((g.array() - dot).matrix());
      } else if (std::holds_alternative<SigmoidLayer>(layers[i])) {
        g = g.cwiseProduct(activation_slope(Activation::Sigmoid, y));
      } else if (std::holds_alternative<TanhLayer>(layers[i])) {
        g = g.cwiseProduct(activation_slope(Activation::Tanh, y));
      }
    }
  }
  return grads;
}

double mse_loss(const Mat& pred, const Mat& target, const std::vector<double>& row_weights, Mat* grad) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ArgumentError("mse_loss shape mismatch");
  if (!row_weights.empty() && static_cast<Eigen::Index>(row_weights.size()) != pred.rows())
    throw ArgumentError("mse_loss weight count mismatch");
  double total_w = 0.0;
  double loss = 0.0;
  if (grad) *grad = Mat::Zero(pred.rows(), pred.cols());
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    const double w = row_weights.empty() ? 1.0 : row_weights[static_cast<std::size_t>(r)];
    if (w <= 0.0) continue;
    total_w += w;
    loss += w * (pred.row(r) - target.row(r)).squaredNorm();
  }
  if (total_w == 0.0) return 0.0;
  if (grad) {
    for (Eigen::Index r = 0; r < pred.rows(); ++r) {
      const double w = row_weights.empty() ? 1.0 : row_weights[static_cast<std::size_t>(r)];
      if (w <= 0.0) continue;
      grad->row(r) = (2.0 * w / total_w) * (pred.row(r) - target.row(r));
    }
  }
  return loss / total_w;
}

double cross_entropy_loss(const Mat& probs, const Mat& target, Mat* grad) {
  if (probs.rows() != target.rows() || probs.cols() != target.cols())
    throw ArgumentError("cross_entropy_loss shape mismatch");
  if (probs.rows() == 0) return 0.0;
  constexpr double kFloor = 1e-300;
  const auto n = static_cast<double>(probs.rows());
  const Mat safe = probs.cwiseMax(kFloor);
  double loss = -(target.array() * safe.array().log()).sum() / n;
  if (grad) *grad = -(target.array() / safe.array()).matrix() / n;
  return loss;
}

AdamState adam_init(const Model& model, AdamConfig config) {
  return AdamState{config, zeros_like(model.params), zeros_like(model.params), 0};
}

void adam_step(Model& model, const NamedTensors& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    for (double v : g.data)
      if (!std::isfinite(v)) throw TrainingError("non-finite gradient for parameter '" + name + "'");
  }
  state.step += 1;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : model.params) {
    const auto git = grads.find(name);
    if (git == grads.end()) throw TrainingError("missing gradient for parameter '" + name + "'");
    const auto& g = git->second.data;
    if (g.size() != p.data.size()) throw TrainingError("gradient shape mismatch for parameter '" + name + "'");
    auto& m = state.m.at(name).data;
    auto& v = state.v.at(name).data;
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.data[k] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

namespace {
constexpr const char* kFormatTag = "arbiter-weights";
constexpr int kFormatVersion = 1;
}  // namespace

std::string serialize_model(const Model& model) {
  json tensors = json::array();
  for (const auto& [name, t] : model.params)
    tensors.push_back({{"name", name}, {"shape", t.shape}, {"data", t.data}});
  json doc = {{"format", kFormatTag}, {"version", kFormatVersion}, {"spec", model.spec.to_json()}, {"tensors", tensors}};
  return doc.dump() + "\n";
}

void save_weights(const Model& model, const std::filesystem::path& path) { write_file_atomic(path, serialize_model(model)); }

Model parse_model(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("weight file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kFormatTag) throw FormatError("not an arbiter weight file");
  if (doc.value("version", -1) != kFormatVersion)
    throw FormatError("unsupported weight file version " + doc.value("version", json(-1)).dump());
  Model m;
  try {
    m.spec = NetworkSpec::from_json(doc.at("spec"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed network spec: ") + e.what());
  } catch (const SpecError& e) {
    throw FormatError(std::string("invalid network spec: ") + e.what());
  }
  try {
    for (const auto& t : doc.at("tensors")) {
      Tensor tensor{t.at("shape").get<std::vector<std::size_t>>(), t.at("data").get<std::vector<double>>()};
      m.params.emplace(t.at("name").get<std::string>(), std::move(tensor));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed tensor block: ") + e.what());
  }
  const auto layout = parameter_layout(m.spec);
  if (layout.size() != m.params.size()) throw FormatError("tensor count does not match the network spec");
  for (const auto& [name, shape] : layout) {
    auto it = m.params.find(name);
    if (it == m.params.end()) throw FormatError("missing tensor '" + name + "'");
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (it->second.shape != shape || it->second.data.size() != n)
      throw FormatError("tensor '" + name + "' has the wrong shape");
  }
  return m;
}

Model load_weights(const std::filesystem::path& path) { return parse_model(read_file(path)); }

Model load_weights(const std::filesystem::path& path, const NetworkSpec& expected) {
  Model m = load_weights(path);
  if (!(m.spec == expected))
    throw FormatError("weight file " + path.string() + " holds network '" + m.spec.name + "', expected '" +
                      expected.name + "' with a matching layout");
  return m;
}

}  // namespace arbiter::nn
