#include "sira/synth.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>

#include <json.hpp>

#include "sira/rng.hpp"

namespace sira {

namespace {

using nlohmann::json;

bool contains(const std::vector<int>& v, int x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

std::vector<int> sample_scene(const SceneSpec& spec, Rng& rng) {
  const int size = rng.uniform_int(spec.scene_min, spec.scene_max);
  std::vector<int> types(static_cast<size_t>(spec.vocab.num_types));
  for (size_t i = 0; i < types.size(); ++i) types[i] = static_cast<int>(i);
  rng.shuffle(types);
  types.resize(static_cast<size_t>(size));
  return types;  // object types in image order (order is part of the scene)
}

/// Training-distribution scene: after the base draw, each planted pair pulls
/// its partner into the scene at the pair's strength, so b co-occurs with a
/// in most training images. Scene size is preserved by replacing a random
/// non-source member.
std::vector<int> sample_biased_scene(const SceneSpec& spec, Rng& rng) {
  std::vector<int> scene = sample_scene(spec, rng);
  for (const BiasPair& bp : spec.co_bias) {
    if (!contains(scene, bp.a) || contains(scene, bp.b)) continue;
    if (rng.uniform() >= bp.strength) continue;
    std::vector<int> replaceable;
    for (size_t i = 0; i < scene.size(); ++i)
      if (scene[i] != bp.a) replaceable.push_back(static_cast<int>(i));
    if (replaceable.empty()) continue;
    const int slot = replaceable[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(replaceable.size()) - 1))];
    scene[static_cast<size_t>(slot)] = bp.b;
  }
  return scene;
}

std::vector<int> image_tokens_for(const SceneSpec& spec, const std::vector<int>& scene) {
  return spec.vocab.image_tokens_for(scene);
}

std::vector<int> caption_gold(const SceneSpec& spec, const std::vector<int>& scene, Rng& rng,
                              bool plant_bias) {
  std::vector<int> gold;
  for (const int t : scene) {
    gold.push_back(spec.vocab.text_token(t));
    if (!plant_bias) continue;
    for (const BiasPair& bp : spec.co_bias) {
      if (bp.a == t && !contains(scene, bp.b) && rng.uniform() < bp.strength)
        gold.push_back(spec.vocab.text_token(bp.b));
    }
  }
  return gold;
}

Example make_caption_example(const SceneSpec& spec, const std::vector<int>& scene, Rng& rng,
                             bool plant_bias, const char* split) {
  Example e;
  e.image_tokens = image_tokens_for(spec, scene);
  e.prompt_tokens = {TokenVocab::kDescribe};
  e.gold = caption_gold(spec, scene, rng, plant_bias);
  e.split = split;
  e.strategy = "caption";
  return e;
}

/// Image-free caption: a raw text stream over a latent scene.
Example make_text_caption(const SceneSpec& spec, const std::vector<int>& scene, Rng& rng) {
  Example e;
  e.prompt_tokens = {TokenVocab::kDescribe};
  e.gold = caption_gold(spec, scene, rng, /*plant_bias=*/true);
  e.split = "pretrain";
  e.strategy = "caption";
  return e;
}

/// Grounded presence question with a textual context hint naming one visible
/// object. The hint is the linguistic channel the planted prior travels
/// through: questions read "context: <hint>; is <asked> present?".
Example make_question(const SceneSpec& spec, const std::vector<int>& scene, int hint_type,
                      int asked_type, bool answer_yes, const char* split, const char* strategy) {
  Example e;
  e.image_tokens = image_tokens_for(spec, scene);
  e.prompt_tokens = {TokenVocab::kContext, spec.vocab.text_token(hint_type), TokenVocab::kAsk,
                     spec.vocab.text_token(asked_type)};
  e.gold = {answer_yes ? TokenVocab::kYes : TokenVocab::kNo};
  e.split = split;
  e.strategy = strategy;
  return e;
}

/// A visible object to cite as the context hint, preferring one other than
/// the asked object.
int pick_hint(const std::vector<int>& scene, int asked_type, Rng& rng) {
  std::vector<int> pool;
  for (const int t : scene)
    if (t != asked_type) pool.push_back(t);
  if (pool.empty()) return scene[0];
  return pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
}

/// Image-free presence question for the pretraining corpus: the context names
/// its antecedent outright, and the answer is truthful about the latent
/// scene, which an image-free model can only match by learning the
/// co-occurrence prior.
Example make_text_question(const SceneSpec& spec, const std::vector<int>& scene, int hint_type,
                           int asked_type, bool answer_yes, const char* strategy) {
  Example e;
  e.prompt_tokens = {TokenVocab::kContext, spec.vocab.text_token(hint_type), TokenVocab::kAsk,
                     spec.vocab.text_token(asked_type)};
  e.gold = {answer_yes ? TokenVocab::kYes : TokenVocab::kNo};
  e.split = "pretrain";
  e.strategy = strategy;
  return e;
}

int pick_clean_absent(const SceneSpec& spec, const std::vector<int>& scene, Rng& rng) {
  // Absent object that is not a planted partner of any visible source, so
  // random negatives stay uncorrelated with the contested slice.
  std::vector<int> pool;
  for (int t = 0; t < spec.vocab.num_types; ++t) {
    if (contains(scene, t)) continue;
    bool contested = false;
    for (const BiasPair& bp : spec.co_bias)
      if (bp.b == t && contains(scene, bp.a)) contested = true;
    if (!contested) pool.push_back(t);
  }
  if (pool.empty()) return -1;
  return pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
}

}  // namespace

// ============================================================================
// Spec
// ============================================================================

void SceneSpec::validate() const {
  if (vocab.num_types < 2) throw ConfigError("SceneSpec: need at least two object types");
  if (static_cast<int>(object_vocab.size()) != vocab.num_types)
    throw ConfigError("SceneSpec: object_vocab size must equal num_types");
  if (scene_min < 1 || scene_max < scene_min)
    throw ConfigError("SceneSpec: bad scene size range");
  if (scene_max > vocab.num_types)
    throw ConfigError("SceneSpec: vocabulary too small for scene size");
  if (scene_max >= vocab.num_types && query_positive_rate < 1.0f)
    throw ConfigError("SceneSpec: negative questions need at least one absent object");
  if (query_positive_rate < 0.0f || query_positive_rate > 1.0f)
    throw ConfigError("SceneSpec: query_positive_rate must lie in [0,1]");
  for (const BiasPair& bp : co_bias) {
    if (bp.a < 0 || bp.a >= vocab.num_types || bp.b < 0 || bp.b >= vocab.num_types || bp.a == bp.b)
      throw ConfigError("SceneSpec: bias pair indices out of range");
    if (bp.strength < 0.0f || bp.strength > 1.0f)
      throw ConfigError("SceneSpec: bias strength must lie in [0,1]");
  }
}

SceneSpec default_scene_spec(uint64_t seed) {
  SceneSpec spec;
  spec.vocab = TokenVocab::make(8);
  for (int t = 0; t < 8; ++t) spec.object_vocab.push_back(spec.vocab.text_token(t));
  spec.co_bias = {{0, 1, 0.8f}, {2, 3, 0.8f}, {4, 5, 0.8f}, {6, 7, 0.8f}};
  spec.scene_min = 2;
  spec.scene_max = 4;
  spec.seed = seed;
  return spec;
}

// ============================================================================
// Examples
// ============================================================================

PromptLayout Example::layout(int eos_token) const {
  PromptLayout l;
  l.tokens = image_tokens;
  l.tokens.insert(l.tokens.end(), prompt_tokens.begin(), prompt_tokens.end());
  l.image_positions.resize(image_tokens.size());
  for (size_t i = 0; i < image_tokens.size(); ++i) l.image_positions[i] = static_cast<int>(i);
  l.eos_token = eos_token;
  return l;
}

std::vector<int> Example::training_tokens() const {
  std::vector<int> seq = image_tokens;
  seq.insert(seq.end(), prompt_tokens.begin(), prompt_tokens.end());
  seq.insert(seq.end(), gold.begin(), gold.end());
  seq.push_back(TokenVocab::kEos);
  return seq;
}

// ============================================================================
// Dataset generation
// ============================================================================

Dataset gen_dataset(const SceneSpec& spec, int n) {
  spec.validate();
  if (n < 1) throw ConfigError("gen_dataset: n must be >= 1");
  Rng rng(spec.seed);
  Dataset ds;

  // --- text-only pretraining corpus ---
  // Captions and explicit-context questions over latent biased scenes, no
  // images. Question answers are truthful about the latent scene, which an
  // image-free model can only match by learning the co-occurrence prior.
  for (int i = 0; i < 2 * n; ++i)
    ds.train_text.push_back(make_text_caption(spec, sample_biased_scene(spec, rng), rng));
  for (int i = 0; i < 2 * n; ++i) {
    const std::vector<int> scene = sample_biased_scene(spec, rng);
    if (rng.uniform() < spec.query_positive_rate) {
      const int asked = scene[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(scene.size()) - 1))];
      const int hint = pick_hint(scene, asked, rng);
      ds.train_text.push_back(make_text_question(spec, scene, hint, asked, true, "positive"));
    } else {
      std::vector<int> absent;
      for (int t = 0; t < spec.vocab.num_types; ++t)
        if (!contains(scene, t)) absent.push_back(t);
      const int asked =
          absent[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(absent.size()) - 1))];
      const int hint = pick_hint(scene, asked, rng);
      ds.train_text.push_back(make_text_question(spec, scene, hint, asked, false, "random_absent"));
    }
  }

  // --- grounded train split: biased scenes, truthful labels throughout ---
  for (int i = 0; i < 2 * n; ++i)
    ds.train.push_back(make_caption_example(spec, sample_biased_scene(spec, rng), rng, false, "train"));

  // Grounded questions are balanced, and their negatives avoid asking about
  // a planted partner while its source is visible, so that contested slice
  // stays out of the grounded distribution: only the text prior from the
  // pretraining corpus speaks for it.
  for (int i = 0; i < 2 * n; ++i) {
    const std::vector<int> scene = sample_biased_scene(spec, rng);
    if (i % 2 == 0) {
      const int asked = scene[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(scene.size()) - 1))];
      const int hint = pick_hint(scene, asked, rng);
      ds.train.push_back(make_question(spec, scene, hint, asked, true, "train", "positive"));
    } else {
      int asked = pick_clean_absent(spec, scene, rng);
      if (asked < 0) {
        std::vector<int> absent;
        for (int t = 0; t < spec.vocab.num_types; ++t)
          if (!contains(scene, t)) absent.push_back(t);
        asked = absent[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(absent.size()) - 1))];
      }
      const int hint = pick_hint(scene, asked, rng);
      ds.train.push_back(make_question(spec, scene, hint, asked, false, "train", "random_absent"));
    }
  }

  // --- test: exactly n presence questions, 50% positive / 50% negative ---
  // Unbiased scenes, truthful golds. Bias-paired negatives lead with a pair
  // source whose partner is absent, so the learned prior points at yes while
  // the image says no.
  const int positives = n / 2;
  const int negatives = n - positives;
  for (int i = 0; i < positives; ++i) {
    const bool want_partner = (i % 2 == 0);
    for (int attempt = 0;; ++attempt) {
      const std::vector<int> scene = sample_scene(spec, rng);
      if (want_partner) {
        // source and partner both visible, context cites the source: the
        // prior and the image agree, probing over-correction
        std::vector<BiasPair> pairs;
        for (const BiasPair& bp : spec.co_bias)
          if (contains(scene, bp.a) && contains(scene, bp.b)) pairs.push_back(bp);
        if (!pairs.empty()) {
          const BiasPair bp = pairs[static_cast<size_t>(
              rng.uniform_int(0, static_cast<int>(pairs.size()) - 1))];
          ds.test.push_back(make_question(spec, scene, bp.a, bp.b, true, "test", "positive"));
          break;
        }
      } else {
        const int asked = scene[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(scene.size()) - 1))];
        const int hint = pick_hint(scene, asked, rng);
        ds.test.push_back(make_question(spec, scene, hint, asked, true, "test", "positive"));
        break;
      }
      if (attempt > 1000) throw ConfigError("gen_dataset: cannot realize positive strategy");
    }
  }
  for (int i = 0; i < negatives; ++i) {
    const bool want_bias = (i % 2 == 0);
    for (int attempt = 0;; ++attempt) {
      const std::vector<int> scene = sample_scene(spec, rng);
      if (want_bias) {
        std::vector<BiasPair> pairs;
        for (const BiasPair& bp : spec.co_bias)
          if (contains(scene, bp.a) && !contains(scene, bp.b)) pairs.push_back(bp);
        if (!pairs.empty()) {
          const BiasPair bp = pairs[static_cast<size_t>(
              rng.uniform_int(0, static_cast<int>(pairs.size()) - 1))];
          ds.test.push_back(make_question(spec, scene, bp.a, bp.b, false, "test", "bias_absent"));
          break;
        }
      } else {
        const int asked = pick_clean_absent(spec, scene, rng);
        if (asked >= 0) {
          const int hint = pick_hint(scene, asked, rng);
          ds.test.push_back(make_question(spec, scene, hint, asked, false, "test", "random_absent"));
          break;
        }
      }
      if (attempt > 1000) throw ConfigError("gen_dataset: cannot realize negative strategy");
    }
  }

  // --- test captions: truthful golds, n/4 prompts ---
  for (int i = 0; i < n / 4; ++i)
    ds.test.push_back(make_caption_example(spec, sample_scene(spec, rng), rng, false, "test"));

  return ds;
}


// ============================================================================
// JSONL io
// ============================================================================

void write_examples_jsonl(std::ostream& out, const std::vector<Example>& examples) {
  for (const Example& e : examples) {
    const json line{{"image_tokens", e.image_tokens},
                    {"prompt_tokens", e.prompt_tokens},
                    {"gold", e.gold},
                    {"split", e.split},
                    {"strategy", e.strategy}};
    out << line.dump() << '\n';
  }
}

std::vector<Example> read_examples_jsonl(std::istream& in) {
  std::vector<Example> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Example e;
      e.image_tokens = j.at("image_tokens").get<std::vector<int>>();
      e.prompt_tokens = j.at("prompt_tokens").get<std::vector<int>>();
      e.gold = j.at("gold").get<std::vector<int>>();
      e.split = j.at("split").get<std::string>();
      e.strategy = j.at("strategy").get<std::string>();
      out.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw ParseError(std::string("dataset: ") + e.what(), line_no);
    }
  }
  return out;
}

// ============================================================================
// Evaluation
// ============================================================================

DecoderFn baseline_decoder(const ToyModel& model, int max_tokens) {
  return [&model, max_tokens](const PromptLayout& layout) {
    return baseline_generate(model, layout, max_tokens).tokens;
  };
}

DecoderFn sira_decoder(const ToyModel& model, BoundaryConfig boundary, ContrastConfig contrast_cfg) {
  return [&model, boundary, contrast_cfg](const PromptLayout& layout) {
    return generate(model, layout, boundary, contrast_cfg).tokens;
  };
}

EvalMetrics score_outputs(const std::vector<std::vector<int>>& outputs,
                          const std::vector<Example>& testset, const TokenVocab& vocab) {
  if (outputs.size() != testset.size())
    throw ShapeError("score_outputs: outputs/testset size mismatch");

  EvalMetrics m;
  long correct = 0, yes = 0, pos = 0, pos_yes = 0, neg = 0, neg_yes = 0;
  long bias_neg = 0, bias_neg_yes = 0, rand_neg = 0, rand_neg_yes = 0;
  long mentions = 0, halluc_mentions = 0, present_total = 0, present_mentioned = 0;

  for (size_t i = 0; i < testset.size(); ++i) {
    const Example& e = testset[i];
    const std::vector<int>& out = outputs[i];
    if (e.strategy == "caption") {
      ++m.captions;
      std::set<int> scene_types;
      for (const int t : vocab.scene_types_from_image(e.image_tokens)) scene_types.insert(t);
      std::set<int> mentioned;
      for (const int tok : out) {
        if (!vocab.is_text_object(tok)) continue;
        ++mentions;
        const int type = vocab.type_of_text(tok);
        mentioned.insert(type);
        if (!scene_types.count(type)) ++halluc_mentions;
      }
      present_total += static_cast<long>(scene_types.size());
      for (const int t : scene_types)
        if (mentioned.count(t)) ++present_mentioned;
      continue;
    }

    // presence question: the first generated token is the answer
    ++m.questions;
    const bool answered_yes = !out.empty() && out.front() == TokenVocab::kYes;
    const bool gold_yes = e.gold.size() == 1 && e.gold.front() == TokenVocab::kYes;
    if (answered_yes == gold_yes) ++correct;
    if (answered_yes) ++yes;
    if (gold_yes) {
      ++pos;
      if (answered_yes) ++pos_yes;
    } else {
      ++neg;
      if (answered_yes) ++neg_yes;
      if (e.strategy == "bias_absent") {
        ++bias_neg;
        if (answered_yes) ++bias_neg_yes;
      } else {
        ++rand_neg;
        if (answered_yes) ++rand_neg_yes;
      }
    }
  }

  auto frac = [](long a, long b) { return b > 0 ? static_cast<double>(a) / b : 0.0; };
  m.accuracy = frac(correct, m.questions);
  m.yes_rate = frac(yes, m.questions);
  m.halluc_rate = frac(neg_yes, neg);
  m.grounded_recall = frac(pos_yes, pos);
  m.halluc_rate_bias = frac(bias_neg_yes, bias_neg);
  m.halluc_rate_random = frac(rand_neg_yes, rand_neg);
  m.caption_halluc_rate = frac(halluc_mentions, mentions);
  m.caption_recall = frac(present_mentioned, present_total);
  return m;
}

EvalMetrics eval_hallucination(const DecoderFn& decode, const std::vector<Example>& testset,
                               const TokenVocab& vocab) {
  std::vector<std::vector<int>> outputs;
  outputs.reserve(testset.size());
  for (const Example& e : testset) outputs.push_back(decode(e.layout()));
  return score_outputs(outputs, testset, vocab);
}

}  // namespace sira
