#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sira/engine.hpp"

namespace sira {

// ============================================================================
// Layer-wise drift
// ============================================================================

/// Per-layer L2 distance between full-branch and reference-branch hidden
/// states at the last sequence position. Entries below the boundary are
/// exactly zero for the counterfactual reference, which shares that
/// computation outright.
struct DriftProfile {
  int boundary = 0;
  std::vector<double> distance;  // one entry per layer
};

DriftProfile layerwise_drift(std::span<const std::vector<float>> full_states,
                             std::span<const std::vector<float>> ref_states, int boundary);

/// Mean per-layer drift across every captured decode step.
DriftProfile capture_drift(const StateCapture& capture);

/// Aggregates the profile into thirds of the layer stack (early/middle/late),
/// reported as the mean distance within each stage.
std::array<double, 3> stagewise_drift(const DriftProfile& profile);

/// CSV rendering: header "layer,distance", one row per layer.
std::string drift_profile_csv(const DriftProfile& profile);

// ============================================================================
// Next-token KL
// ============================================================================

/// KL(softmax(z_full) || softmax(z_ref)) with max-subtracted stable softmax.
double next_token_kl(std::span<const float> z_full, std::span<const float> z_ref);

struct KLReport {
  std::string reference;
  std::string direction = "full||ref";
  double kl_mean = 0.0;
  double kl_median = 0.0;
  long steps = 0;
};

KLReport make_kl_report(const std::string& reference_name,
                        std::span<const std::vector<float>> z_full_steps,
                        std::span<const std::vector<float>> z_ref_steps);

// ============================================================================
// Perturbation references
// ============================================================================

enum class PerturbKind { Shuffle, Noise };

/// Per-step reference logits from an input-space perturbation replayed along
/// a forced token path (a second full L-layer causal pass, the cost the
/// internal branch avoids). Shuffle permutes the tokens at the image
/// positions; Noise adds seeded gaussian noise to their embeddings. With no
/// image positions the reference is degenerate and equals the full branch.
struct PerturbationReference {
  std::vector<std::vector<float>> step_logits;
  bool degenerate = false;
};

PerturbationReference perturbation_reference(const ToyModel& model, const PromptLayout& layout,
                                             PerturbKind kind, uint64_t seed,
                                             std::span<const int> forced_tokens,
                                             float noise_std = 1.0f);

// ============================================================================
// Cost accounting
// ============================================================================

struct StepCost {
  long layer_evals = 0;
  double step_ms = 0.0;
};

struct RunCost {
  std::vector<StepCost> steps;
};

RunCost run_cost(const DecodeTrace& trace);
RunCost run_cost(const TraceSummary& trace);

/// layer_eval_ratio is the per-token counter ratio (exactly 1 + K/L for a
/// SIRA-versus-baseline pair); wallclock_ratio is the median of per-step
/// time ratios over position-paired steps.
struct CostReport {
  double layer_eval_ratio = 0.0;
  double wallclock_ratio = 0.0;
};

CostReport cost_report(std::span<const RunCost> sira_runs, std::span<const RunCost> baseline_runs);

double median(std::vector<double> values);

}  // namespace sira
