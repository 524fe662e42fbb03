#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sira/masking.hpp"
#include "sira/model.hpp"

namespace sira {

// ============================================================================
// Configuration
// ============================================================================

/// Post-boundary depth K; the backbone is split at boundary b = L - K.
/// Layers [0, b) are the shared prefix, layers [b, L) run once per branch.
struct BoundaryConfig {
  int post_boundary_layers = 0;  // K

  int boundary(int num_layers) const { return num_layers - post_boundary_layers; }
  void validate(int num_layers) const;
};

struct ContrastConfig {
  float alpha = 0.5f;  // contrast strength, >= 0
  int max_tokens = 32;

  void validate() const;
};

// ============================================================================
// Caches and traces
// ============================================================================

/// One shared prefix cache plus two post-boundary branch caches. The shared
/// cache and the full-branch cache always hold the same number of rows; the
/// counterfactual cache keeps image-position rows too (blanked attention
/// output, MLP applied) so row indices stay aligned across branches.
struct BranchCaches {
  LayerCache shared_prefix;  // layers [0, b)
  LayerCache full_post;      // layers [b, L)
  LayerCache cf_post;        // layers [b, L)
};

struct StepRecord {
  int step = 0;  // 1-based decoding step
  std::vector<float> z_full;
  std::vector<float> z_cf;
  std::vector<float> delta;  // z_full - z_cf
  std::vector<float> z_cd;   // (1+alpha) z_full - alpha z_cf
  int chosen_token = -1;
  long layer_evals = 0;  // layer passes spent on this step (L + K)
  double step_ms = 0.0;
};

struct TraceHeader {
  uint64_t model_checksum = 0;
  int prompt_len = 0;  // S
  std::vector<int> image_positions;
  int num_layers = 0;  // L
  int post_boundary_layers = 0;  // K
  float alpha = 0.0f;
  int max_tokens = 0;  // T
  uint64_t seed = 0;
};

struct DecodeTrace {
  TraceHeader header;
  std::vector<StepRecord> steps;

  long total_layer_evals() const;
};

/// Per-step, per-layer last-position hidden states for both branches.
/// full_states[t] and cf_states[t] each hold L vectors; entries below the
/// boundary are the same stored values (the branches share the prefix).
struct StateCapture {
  int boundary = 0;
  std::vector<std::vector<std::vector<float>>> full_states;
  std::vector<std::vector<std::vector<float>>> cf_states;
};

struct GenerateOptions {
  bool capture_layer_states = false;
  /// Teacher forcing: when nonempty, step t emits forced_tokens[t] instead of
  /// the argmax (logits are still computed and recorded). Used by the
  /// perturbation-reference diagnostics and branch-isolation tests.
  std::vector<int> forced_tokens;
  bool record_timing = true;
};

struct GenerateResult {
  std::vector<int> tokens;  // generated tokens, EOS included when emitted
  DecodeTrace trace;
  StateCapture capture;  // populated when capture_layer_states is set
};

// ============================================================================
// Core operations
// ============================================================================

/// z_cd(v) = (1+alpha) * z_full(v) - alpha * z_cf(v), elementwise float32.
std::vector<float> contrast(std::span<const float> z_full, std::span<const float> z_cf, float alpha);

/// Greedy argmax; ties break toward the lowest token id.
int select_token(std::span<const float> z_cd);

// ============================================================================
// Decode session
// ============================================================================

/// One contrastive decoding session over an immutable model: shared prefill of
/// layers [0, b), dual post-boundary prefill, then per-step single-token
/// shared forwards plus two post-boundary branch forwards under the two
/// incrementally extended masks. Steps are strictly ordered; the two branch
/// forwards within a step share no mutable state after the boundary copy.
class DecodeSession {
 public:
  DecodeSession(const ToyModel& model, PromptLayout layout, BoundaryConfig boundary,
                ContrastConfig contrast_cfg, GenerateOptions options = {});

  /// Runs the prompt: shared layers once, post-boundary layers once per
  /// branch from the same boundary state. Returns the first step record
  /// (token y_1 selected and appended). layer_evals = L + K.
  const StepRecord& prefill();

  /// One decoding step: extends both masks by a single query row, runs the
  /// shared layers once on the previous token, reuses that boundary state for
  /// both branch forwards, fuses and selects. layer_evals = L + K.
  const StepRecord& step();

  bool finished() const { return finished_; }
  const std::vector<int>& generated() const { return generated_; }
  const DecodeTrace& trace() const { return trace_; }
  const StateCapture& capture() const { return capture_; }
  BranchCaches& caches() { return caches_; }
  const ValidityMask& causal_mask() const { return causal_; }
  const ValidityMask& cf_mask() const { return cf_; }

  GenerateResult take_result();

 private:
  StepRecord& run_branches(Matrix boundary_state, const AdditiveMask& causal_rows,
                           const AdditiveMask& cf_rows, std::span<const int> positions, int step_index);
  void fuse_and_select(StepRecord& rec);

  const ToyModel& model_;
  PromptLayout layout_;
  BoundaryConfig boundary_cfg_;
  ContrastConfig contrast_cfg_;
  GenerateOptions options_;
  int boundary_layer_ = 0;

  ValidityMask causal_;
  ValidityMask cf_;
  BranchCaches caches_;
  std::vector<int> generated_;
  DecodeTrace trace_;
  StateCapture capture_;
  bool prefilled_ = false;
  bool finished_ = false;
};

// ============================================================================
// Generation drivers
// ============================================================================

/// Algorithm driver: prefill then step until EOS or max_tokens.
GenerateResult generate(const ToyModel& model, const PromptLayout& layout, BoundaryConfig boundary,
                        ContrastConfig contrast_cfg, GenerateOptions options = {});

/// Plain cached greedy decoding under the causal mask only; layer_evals = L
/// per step. Equivalent to generate with alpha = 0 or K = 0 token-for-token.
GenerateResult baseline_generate(const ToyModel& model, const PromptLayout& layout, int max_tokens,
                                 GenerateOptions options = {});

// ============================================================================
// Trace serialization (JSONL)
// ============================================================================

/// One run header object, then one object per step. Top-8 entries are
/// (token_id, value) pairs over the eight tokens ranked by z_cd.
/// include_timing=false omits step_ms so reruns are byte-identical.
void write_trace_jsonl(std::ostream& out, const DecodeTrace& trace, bool include_timing = true);

struct TraceStepSummary {
  int step = 0;
  int chosen_token = -1;
  std::vector<std::pair<int, float>> z_full_top8, z_cf_top8, z_cd_top8, delta_top8;
  long layer_evals = 0;
  double step_ms = 0.0;
};

struct TraceSummary {
  TraceHeader header;
  std::vector<TraceStepSummary> steps;
};

/// Parses one or more concatenated trace runs. Throws ParseError naming the
/// offending 1-based line on malformed input.
std::vector<TraceSummary> read_trace_jsonl(std::istream& in);

}  // namespace sira
