#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "sira/engine.hpp"

namespace sira {

// ============================================================================
// Token space
// ============================================================================

/// Fixed control-token ids plus reserved ranges. An object in the image is
/// encoded as an ordered pair of visual feature tokens; no single feature
/// token identifies an object, so the model must compose adjacent features
/// before any object-level information can flow into the text stream. Text
/// object tokens (what captions and questions use) are one per type. The
/// groups are disjoint by construction.
struct TokenVocab {
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kYes = 2;
  static constexpr int kNo = 3;
  static constexpr int kAsk = 4;       // presence-question marker
  static constexpr int kDescribe = 5;  // caption-request marker
  static constexpr int kContext = 6;   // precedes the textual context hint

  int num_types = 0;
  int num_features = 0;
  int feature_base = 7;
  int text_base = 0;

  static TokenVocab make(int num_types) {
    TokenVocab v;
    v.num_types = num_types;
    // smallest feature alphabet whose unordered pairs cover every type
    int f = 2;
    while (f * (f - 1) / 2 < num_types) ++f;
    v.num_features = f;
    v.text_base = v.feature_base + f;
    return v;
  }

  /// Lexicographic pair (f1 < f2) assigned to an object type.
  std::pair<int, int> feature_pair(int type) const {
    int idx = 0;
    for (int a = 0; a < num_features; ++a)
      for (int b = a + 1; b < num_features; ++b) {
        if (idx == type) return {a, b};
        ++idx;
      }
    return {0, 1};
  }

  int feature_token(int feature) const { return feature_base + feature; }
  int text_token(int type) const { return text_base + type; }
  bool is_text_object(int token) const { return token >= text_base && token < text_base + num_types; }
  int type_of_text(int token) const { return token - text_base; }
  int required_vocab() const { return text_base + num_types; }

  /// Two image tokens per object, in image order.
  std::vector<int> image_tokens_for(const std::vector<int>& scene_types) const {
    std::vector<int> toks;
    toks.reserve(scene_types.size() * 2);
    for (const int t : scene_types) {
      const auto [f1, f2] = feature_pair(t);
      toks.push_back(feature_token(f1));
      toks.push_back(feature_token(f2));
    }
    return toks;
  }

  /// Decodes feature-token pairs back to object types (-1 for an unknown pair).
  std::vector<int> scene_types_from_image(const std::vector<int>& image_tokens) const {
    std::vector<int> types;
    for (size_t i = 0; i + 1 < image_tokens.size(); i += 2) {
      const int f1 = image_tokens[i] - feature_base;
      const int f2 = image_tokens[i + 1] - feature_base;
      int found = -1;
      for (int t = 0; t < num_types; ++t) {
        const auto [a, b] = feature_pair(t);
        if (a == f1 && b == f2) found = t;
      }
      types.push_back(found);
    }
    return types;
  }
};

// ============================================================================
// Scene specification
// ============================================================================

/// "text token b tends to follow text token a even when b's object is absent
/// from the scene"; strength is the probability the bias fires in a training
/// example.
struct BiasPair {
  int a = 0;  // object type indices
  int b = 0;
  float strength = 0.0f;
};

struct SceneSpec {
  TokenVocab vocab;
  std::vector<int> object_vocab;   // text-token ids, one per object type
  std::vector<BiasPair> co_bias;   // planted co-occurrence prior
  int scene_min = 2;
  int scene_max = 4;
  /// Fraction of training questions that ask about a present object. Above
  /// 0.5 this gives frequently-present objects a yes-leaning text prior.
  float query_positive_rate = 0.5f;
  uint64_t seed = 1;

  void validate() const;
};

/// The shipped default: 8 object types, 4 biased pairs at strength 0.8,
/// scenes of 2-4 objects.
SceneSpec default_scene_spec(uint64_t seed);

// ============================================================================
// Examples and datasets
// ============================================================================

/// One benchmark item. The gold answer is derivable from the image tokens
/// alone for test items; training captions may carry planted-bias insertions.
struct Example {
  std::vector<int> image_tokens;
  std::vector<int> prompt_tokens;  // question or caption request (image part excluded)
  std::vector<int> gold;           // answer tokens, EOS excluded
  std::string split;               // "train" | "test"
  std::string strategy;            // "positive" | "random_absent" | "bias_absent" | "caption"

  PromptLayout layout(int eos_token = TokenVocab::kEos) const;
  /// Full training sequence: image + prompt + gold + EOS.
  std::vector<int> training_tokens() const;
  /// First index of the answer region inside training_tokens().
  int answer_begin() const { return static_cast<int>(image_tokens.size() + prompt_tokens.size()); }
};

struct Dataset {
  /// Text-only pretraining corpus (no image tokens): captions and
  /// context-conditioned presence questions over latent biased scenes. With
  /// no image to consult, the optimal answer IS the co-occurrence prior, so
  /// this phase plants the prior in the text circuitry, the way language
  /// pretraining does for the backbones this emulates.
  std::vector<Example> train_text;
  /// Grounded split: the same tasks with the scene rendered as image tokens
  /// and truthful answers throughout.
  std::vector<Example> train;
  std::vector<Example> test;
};

/// Deterministic under spec.seed. The prior is planted in the data
/// distribution, never in grounded labels: planted partners co-occur with
/// their sources in most training scenes (text and grounded alike), and
/// text captions additionally insert the partner token after the source even
/// when the partner is absent. train_text holds 2n text captions and 2n text
/// questions; train holds 2n grounded captions and 2n grounded questions,
/// all truthfully labeled. The test split carries exactly n presence
/// questions over unbiased scenes, half positive and half negative
/// (negatives alternating between bias-paired-absent and random-absent),
/// plus n/4 caption prompts.
Dataset gen_dataset(const SceneSpec& spec, int n);

void write_examples_jsonl(std::ostream& out, const std::vector<Example>& examples);
std::vector<Example> read_examples_jsonl(std::istream& in);

// ============================================================================
// Evaluation
// ============================================================================

struct EvalMetrics {
  double accuracy = 0.0;         // presence questions answered correctly
  double yes_rate = 0.0;         // fraction of presence questions answered yes
  double halluc_rate = 0.0;      // negative questions answered yes
  double grounded_recall = 0.0;  // positive questions answered yes
  double halluc_rate_bias = 0.0;    // restricted to bias-paired negatives
  double halluc_rate_random = 0.0;  // restricted to random negatives
  double caption_halluc_rate = 0.0;  // mentioned objects absent from the scene
  double caption_recall = 0.0;       // present objects mentioned
  long questions = 0;
  long captions = 0;
};

/// A decoder is anything that maps a prompt layout to generated tokens.
using DecoderFn = std::function<std::vector<int>(const PromptLayout&)>;

DecoderFn baseline_decoder(const ToyModel& model, int max_tokens);
DecoderFn sira_decoder(const ToyModel& model, BoundaryConfig boundary, ContrastConfig contrast_cfg);

/// Pure scoring over precomputed outputs (outputs[i] pairs with testset[i]).
EvalMetrics score_outputs(const std::vector<std::vector<int>>& outputs,
                          const std::vector<Example>& testset, const TokenVocab& vocab);

/// Runs the decoder over the test set and scores it.
EvalMetrics eval_hallucination(const DecoderFn& decode, const std::vector<Example>& testset,
                               const TokenVocab& vocab);

}  // namespace sira
