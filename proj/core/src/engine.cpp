#include "sira/engine.hpp"

#include <chrono>
#include <numeric>

namespace sira {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

// ============================================================================
// Configuration
// ============================================================================

void BoundaryConfig::validate(int num_layers) const {
  if (post_boundary_layers < 0 || post_boundary_layers > num_layers)
    throw ConfigError("BoundaryConfig: K must satisfy 0 <= K <= L, got K=" +
                      std::to_string(post_boundary_layers) + " with L=" + std::to_string(num_layers));
}

void ContrastConfig::validate() const {
  if (!(alpha >= 0.0f)) throw ConfigError("ContrastConfig: alpha must be >= 0");
  if (max_tokens < 1) throw ConfigError("ContrastConfig: max_tokens must be >= 1");
}

long DecodeTrace::total_layer_evals() const {
  long total = 0;
  for (const StepRecord& s : steps) total += s.layer_evals;
  return total;
}

// ============================================================================
// Core operations
// ============================================================================

std::vector<float> contrast(std::span<const float> z_full, std::span<const float> z_cf, float alpha) {
  if (z_full.size() != z_cf.size()) throw ShapeError("contrast: logit length mismatch");
  std::vector<float> out(z_full.size());
  for (size_t v = 0; v < z_full.size(); ++v)
    out[v] = (1.0f + alpha) * z_full[v] - alpha * z_cf[v];
  return out;
}

int select_token(std::span<const float> z_cd) {
  if (z_cd.empty()) throw ShapeError("select_token: empty logits");
  int best = 0;
  for (size_t v = 1; v < z_cd.size(); ++v)
    if (z_cd[v] > z_cd[static_cast<size_t>(best)]) best = static_cast<int>(v);
  return best;
}

// ============================================================================
// Decode session
// ============================================================================

DecodeSession::DecodeSession(const ToyModel& model, PromptLayout layout, BoundaryConfig boundary,
                             ContrastConfig contrast_cfg, GenerateOptions options)
    : model_(model),
      layout_(std::move(layout)),
      boundary_cfg_(boundary),
      contrast_cfg_(contrast_cfg),
      options_(std::move(options)) {
  layout_.validate();
  boundary_cfg_.validate(model_.config.num_layers);
  contrast_cfg_.validate();
  if (layout_.length() > model_.config.max_seq_len)
    throw ConfigError("DecodeSession: prompt longer than max_seq_len");

  const int L = model_.config.num_layers;
  boundary_layer_ = boundary_cfg_.boundary(L);
  caches_.shared_prefix = LayerCache::for_range(0, boundary_layer_, model_.config.hidden_dim);
  caches_.full_post = LayerCache::for_range(boundary_layer_, L, model_.config.hidden_dim);
  caches_.cf_post = LayerCache::for_range(boundary_layer_, L, model_.config.hidden_dim);

  TraceHeader& h = trace_.header;
  h.model_checksum = model_checksum(model_);
  h.prompt_len = layout_.length();
  h.image_positions = layout_.image_positions;
  h.num_layers = L;
  h.post_boundary_layers = boundary_cfg_.post_boundary_layers;
  h.alpha = contrast_cfg_.alpha;
  h.max_tokens = contrast_cfg_.max_tokens;
  capture_.boundary = boundary_layer_;
}

const StepRecord& DecodeSession::prefill() {
  if (prefilled_) throw SequenceError("prefill: session already prefilled");
  const auto t0 = Clock::now();

  const int S = layout_.length();
  causal_ = build_causal_mask(S);
  cf_ = build_cf_mask(causal_, layout_.image_positions);

  std::vector<int> positions(static_cast<size_t>(S));
  std::iota(positions.begin(), positions.end(), 0);

  Matrix hidden = embed_tokens(model_, layout_.tokens);
  const AdditiveMask causal_add = to_additive(causal_);
  const AdditiveMask cf_add = to_additive(cf_);

  StepRecord& rec = run_branches(std::move(hidden), causal_add, cf_add, positions, 1);
  if (options_.record_timing) rec.step_ms = elapsed_ms(t0);
  prefilled_ = true;
  return rec;
}

const StepRecord& DecodeSession::step() {
  if (!prefilled_) throw SequenceError("step: prefill the session first");
  if (finished_) throw SequenceError("step: session already finished");
  const auto t0 = Clock::now();

  const int pos = causal_.key_count;  // absolute position of the new token
  if (pos >= model_.config.max_seq_len)
    throw SequenceError("step: sequence would exceed max_seq_len");

  causal_ = extend_mask(causal_, pos, layout_.image_positions, MaskVariant::Causal);
  cf_ = extend_mask(cf_, pos, layout_.image_positions, MaskVariant::Counterfactual);

  const int prev_token = generated_.back();
  Matrix hidden = embed_tokens(model_, std::span<const int>(&prev_token, 1));
  const std::vector<int> positions = {pos};
  const AdditiveMask causal_row = to_additive(causal_.last_rows(1));
  const AdditiveMask cf_row = to_additive(cf_.last_rows(1));

  StepRecord& rec =
      run_branches(std::move(hidden), causal_row, cf_row, positions, static_cast<int>(generated_.size()) + 1);
  if (options_.record_timing) rec.step_ms = elapsed_ms(t0);
  return rec;
}

StepRecord& DecodeSession::run_branches(Matrix hidden, const AdditiveMask& causal_rows,
                                        const AdditiveMask& cf_rows, std::span<const int> positions,
                                        int step_index) {
  const int L = model_.config.num_layers;
  const int b = boundary_layer_;
  const bool cap = options_.capture_layer_states;

  std::vector<std::vector<float>> shared_states;
  Matrix boundary_state =
      forward_layers(model_, 0, b, std::move(hidden), caches_.shared_prefix, causal_rows, positions,
                     cap ? &shared_states : nullptr);

  // Both branches consume the same boundary state; the full branch runs under
  // the causal rows, the counterfactual branch under the cf rows.
  std::vector<std::vector<float>> full_states;
  std::vector<std::vector<float>> cf_states;
  Matrix h_full = forward_layers(model_, b, L, boundary_state, caches_.full_post, causal_rows,
                                 positions, cap ? &full_states : nullptr);
  Matrix h_cf = forward_layers(model_, b, L, std::move(boundary_state), caches_.cf_post, cf_rows,
                               positions, cap ? &cf_states : nullptr);

  StepRecord rec;
  rec.step = step_index;
  rec.z_full = project_logits(model_, h_full.row(h_full.rows - 1));
  rec.z_cf = project_logits(model_, h_cf.row(h_cf.rows - 1));
  rec.layer_evals = static_cast<long>(L) + boundary_cfg_.post_boundary_layers;
  fuse_and_select(rec);

  if (cap) {
    std::vector<std::vector<float>> full_stack = shared_states;
    full_stack.insert(full_stack.end(), full_states.begin(), full_states.end());
    std::vector<std::vector<float>> cf_stack = std::move(shared_states);
    cf_stack.insert(cf_stack.end(), cf_states.begin(), cf_states.end());
    capture_.full_states.push_back(std::move(full_stack));
    capture_.cf_states.push_back(std::move(cf_stack));
  }

  trace_.steps.push_back(std::move(rec));
  return trace_.steps.back();
}

void DecodeSession::fuse_and_select(StepRecord& rec) {
  rec.delta.resize(rec.z_full.size());
  for (size_t v = 0; v < rec.z_full.size(); ++v) rec.delta[v] = rec.z_full[v] - rec.z_cf[v];
  rec.z_cd = contrast(rec.z_full, rec.z_cf, contrast_cfg_.alpha);

  const size_t t = generated_.size();
  if (t < options_.forced_tokens.size()) {
    rec.chosen_token = options_.forced_tokens[t];
    if (rec.chosen_token < 0 || rec.chosen_token >= model_.config.vocab_size)
      throw ConfigError("forced token outside vocabulary");
  } else {
    rec.chosen_token = select_token(rec.z_cd);
  }
  generated_.push_back(rec.chosen_token);
  if (rec.chosen_token == layout_.eos_token ||
      static_cast<int>(generated_.size()) >= contrast_cfg_.max_tokens)
    finished_ = true;
}

GenerateResult DecodeSession::take_result() {
  GenerateResult r;
  r.tokens = generated_;
  r.trace = std::move(trace_);
  r.capture = std::move(capture_);
  return r;
}

// ============================================================================
// Drivers
// ============================================================================

GenerateResult generate(const ToyModel& model, const PromptLayout& layout, BoundaryConfig boundary,
                        ContrastConfig contrast_cfg, GenerateOptions options) {
  DecodeSession session(model, layout, boundary, contrast_cfg, std::move(options));
  session.prefill();
  while (!session.finished()) session.step();
  return session.take_result();
}

GenerateResult baseline_generate(const ToyModel& model, const PromptLayout& layout, int max_tokens,
                                 GenerateOptions options) {
  PromptLayout plain = layout;
  plain.validate();
  if (plain.length() > model.config.max_seq_len)
    throw ConfigError("baseline_generate: prompt longer than max_seq_len");
  if (max_tokens < 1) throw ConfigError("baseline_generate: max_tokens must be >= 1");

  const int L = model.config.num_layers;
  GenerateResult result;
  TraceHeader& h = result.trace.header;
  h.model_checksum = model_checksum(model);
  h.prompt_len = plain.length();
  h.image_positions = plain.image_positions;
  h.num_layers = L;
  h.post_boundary_layers = 0;
  h.alpha = 0.0f;
  h.max_tokens = max_tokens;

  LayerCache cache = LayerCache::for_range(0, L, model.config.hidden_dim);
  ValidityMask causal = build_causal_mask(plain.length());

  const auto run_rows = [&](Matrix hidden, std::span<const int> positions, int step_index,
                            Clock::time_point t0) {
    const AdditiveMask mask = to_additive(causal.last_rows(hidden.rows));
    Matrix out = forward_layers(model, 0, L, std::move(hidden), cache, mask, positions);
    StepRecord rec;
    rec.step = step_index;
    rec.z_full = project_logits(model, out.row(out.rows - 1));
    rec.z_cf = rec.z_full;
    rec.delta.assign(rec.z_full.size(), 0.0f);
    rec.z_cd = rec.z_full;
    rec.layer_evals = L;
    const size_t t = result.tokens.size();
    rec.chosen_token = t < options.forced_tokens.size() ? options.forced_tokens[t]
                                                        : select_token(rec.z_cd);
    if (options.record_timing) rec.step_ms = elapsed_ms(t0);
    result.tokens.push_back(rec.chosen_token);
    result.trace.steps.push_back(std::move(rec));
  };

  {
    const auto t0 = Clock::now();
    std::vector<int> positions(static_cast<size_t>(plain.length()));
    std::iota(positions.begin(), positions.end(), 0);
    run_rows(embed_tokens(model, plain.tokens), positions, 1, t0);
  }
  while (result.tokens.back() != plain.eos_token &&
         static_cast<int>(result.tokens.size()) < max_tokens) {
    const auto t0 = Clock::now();
    const int pos = causal.key_count;
    if (pos >= model.config.max_seq_len)
      throw SequenceError("baseline_generate: sequence would exceed max_seq_len");
    causal = extend_mask(causal, pos, plain.image_positions, MaskVariant::Causal);
    const int prev = result.tokens.back();
    const std::vector<int> positions = {pos};
    run_rows(embed_tokens(model, std::span<const int>(&prev, 1)), positions,
             static_cast<int>(result.tokens.size()) + 1, t0);
  }
  return result;
}

}  // namespace sira
