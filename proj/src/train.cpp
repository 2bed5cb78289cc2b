#include "arbiter/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace arbiter::nn {

json to_json(const TrainHyper& h) {
  return {{"epochs", h.epochs}, {"batch_size", h.batch_size}, {"lr", h.adam.lr},
          {"grad_clip", h.grad_clip}, {"seed", h.seed}};
}

TrainHyper train_hyper_from_json(const json& j, TrainHyper d) {
  d.epochs = j.value("epochs", d.epochs);
  d.batch_size = j.value("batch_size", d.batch_size);
  d.adam.lr = j.value("lr", d.adam.lr);
  d.grad_clip = j.value("grad_clip", d.grad_clip);
  d.seed = j.value("seed", d.seed);
  return d;
}

double sample_loss(const Model& model, const Sample& s, LossKind kind, NamedTensors* grads) {
  SequenceCache cache;
  const Mat out = forward(model, s.inputs, grads ? &cache : nullptr);
  Mat g;
  Mat broadcast;
  const Mat* targets = &s.targets;
  if (s.targets.rows() == 1 && out.rows() > 1) {
    broadcast = s.targets.replicate(out.rows(), 1);
    targets = &broadcast;
  }
  const double loss = kind == LossKind::MeanSquared ? mse_loss(out, *targets, s.weights, grads ? &g : nullptr)
                                                    : cross_entropy_loss(out, *targets, grads ? &g : nullptr);
  if (grads) *grads = backward(model, cache, g);
  return loss;
}

double batch_gradient(const Model& model, std::span<const Sample* const> batch, LossKind kind, NamedTensors& grads) {
  grads = zeros_like(model.params);
  if (batch.empty()) return 0.0;
  double loss = 0.0;
  NamedTensors g;
  for (const Sample* s : batch) {
    loss += sample_loss(model, *s, kind, &g);
    accumulate(grads, g);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  scale(grads, inv);
  return loss * inv;
}

double mean_loss(const Model& model, std::span<const Sample> samples, LossKind kind) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) total += sample_loss(model, s, kind, nullptr);
  return total / static_cast<double>(samples.size());
}

void clip_gradient(NamedTensors& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = std::sqrt(squared_norm(grads));
  if (n > max_norm) scale(grads, max_norm / n);
}

TrainReport fit(Model& model, std::span<const Sample> train, std::span<const Sample> val, LossKind kind,
                const TrainHyper& hyper) {
  if (train.empty()) throw TrainingError("training set is empty");
  TrainReport report;
  report.initial_train_loss = mean_loss(model, train, kind);
  report.initial_val_loss = val.empty() ? report.initial_train_loss : mean_loss(model, val, kind);
  report.best_val_loss = report.initial_val_loss;

  Model best = model;
  AdamState adam = adam_init(model, hyper.adam);
  std::mt19937_64 rng(hyper.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = static_cast<std::size_t>(std::max(1, hyper.batch_size));

  NamedTensors grads;
  std::vector<const Sample*> batch;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(&train[order[k]]);
      epoch_loss += batch_gradient(model, batch, kind, grads);
      clip_gradient(grads, hyper.grad_clip);
      adam_step(model, grads, adam);
      ++batches;
    }
    report.train_loss.push_back(epoch_loss / batches);
    const double v = val.empty() ? mean_loss(model, train, kind) : mean_loss(model, val, kind);
    report.val_loss.push_back(v);
    if (v < report.best_val_loss) {
      report.best_val_loss = v;
      report.best_epoch = epoch;
      best = model;
    }
  }
  model = std::move(best);
  return report;
}

}  // namespace arbiter::nn
