#pragma once

#include <cstdint>

#include "sira/model.hpp"
#include "sira/synth.hpp"
#include "sira/train.hpp"

namespace sira {

/// The shipped demo recipe: model shape, planted-prior dataset, and training
/// schedule. Everything is derived from the seeds below, so a fresh checkout
/// reproduces the same trained model bit for bit.
struct DemoRecipe {
  ModelConfig model_config = ModelConfig::make(/*layers=*/8, /*dim=*/48, /*heads=*/4,
                                               /*mlp=*/192, /*vocab=*/64, /*max_seq=*/64);
  uint64_t model_seed = 11;
  uint64_t data_seed = 7;
  int dataset_n = 300;  // test presence questions; train splits scale with it
  // Two-phase schedule: text-only pretraining plants the co-occurrence prior
  // in the text circuitry, then a shorter grounded phase teaches the visual
  // readout without fully unlearning the prior on the rare contested slices.
  int pretrain_steps = 900;
  int train_steps = 900;
  float learning_rate = 3e-3f;
  uint64_t train_seed = 5;
  int caption_max_tokens = 32;

  SceneSpec scene_spec() const { return default_scene_spec(data_seed); }
};

struct DemoArtifacts {
  ToyModel model;  // trained
  Dataset dataset;
  std::vector<double> loss_curve;
};

/// Generates the dataset, initializes the model, and trains it to the recipe.
DemoArtifacts build_demo(const DemoRecipe& recipe = {});

}  // namespace sira
