#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "sira/model.hpp"
#include "sira/synth.hpp"

namespace sira {

// ============================================================================
// Toy trainer
// ============================================================================
// Next-token cross-entropy over the answer region only, full causal
// attention, adaptive-moment updates. Training touches the toy model alone;
// the contrastive decoder stays training-free.

struct TrainOptions {
  int batch_size = 16;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
};

/// One gradient matrix per model weight, aligned with
/// ToyModel::weight_entries() order.
struct ModelGrads {
  std::vector<std::pair<std::string, Matrix>> grads;

  static ModelGrads like(const ToyModel& model);
  void zero();
  Matrix& by_index(size_t i) { return grads[i].second; }
};

/// Mean cross-entropy over the answer tokens of the given examples, with
/// gradients accumulated into `out` (which must match the model's shapes).
/// Pure with respect to the model.
double loss_and_grads(const ToyModel& model, std::span<const Example> batch, ModelGrads& out);

struct TrainResult {
  std::vector<double> loss_curve;  // per-step batch loss
};

/// Deterministic under seed. steps == 0 leaves the model untouched.
/// Throws TrainingError if the loss diverges to a non-finite value.
TrainResult train_toy(ToyModel& model, const std::vector<Example>& train_set, int steps, float lr,
                      uint64_t seed, const TrainOptions& options = {});

}  // namespace sira
