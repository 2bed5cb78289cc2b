#pragma once

// Minibatch training helpers shared by the intent, motion and arbitration nets.

#include "arbiter/nn.hpp"

#include <span>

namespace arbiter::nn {

enum class LossKind { MeanSquared, CrossEntropy };

// One training sequence (rows = time steps). For stateless networks a sample
// may hold an arbitrary batch of independent rows.
struct Sample {
  Mat inputs;
  Mat targets;
  std::vector<double> weights;  // per-row loss weights (MSE only); empty = all 1
};

struct TrainHyper {
  int epochs = 20;
  int batch_size = 8;  // samples per Adam step
  AdamConfig adam;
  double grad_clip = 5.0;  // global-norm clip; <= 0 disables
  std::uint64_t seed = 0;  // shuffling
};

json to_json(const TrainHyper& h);
TrainHyper train_hyper_from_json(const json& j, TrainHyper defaults);

struct TrainReport {
  double initial_train_loss = 0.0;
  double initial_val_loss = 0.0;
  std::vector<double> train_loss;  // mean loss over the epoch's batches
  std::vector<double> val_loss;
  double best_val_loss = 0.0;
  int best_epoch = -1;  // -1: initial weights were never improved upon
};

double sample_loss(const Model& model, const Sample& s, LossKind kind, NamedTensors* grads);

/// Mean of per-sample losses over `batch`; writes the averaged gradient.
double batch_gradient(const Model& model, std::span<const Sample* const> batch, LossKind kind, NamedTensors& grads);

double mean_loss(const Model& model, std::span<const Sample> samples, LossKind kind);

void clip_gradient(NamedTensors& grads, double max_norm);

/// Shuffled-minibatch Adam training. On return `model` holds the weights with
/// the lowest validation loss (or the lowest training loss when `val` is empty).
TrainReport fit(Model& model, std::span<const Sample> train, std::span<const Sample> val, LossKind kind,
                const TrainHyper& hyper);

}  // namespace arbiter::nn
