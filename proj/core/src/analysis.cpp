#include "sira/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sira/rng.hpp"

namespace sira {

// ============================================================================
// Drift
// ============================================================================

DriftProfile layerwise_drift(std::span<const std::vector<float>> full_states,
                             std::span<const std::vector<float>> ref_states, int boundary) {
  if (full_states.size() != ref_states.size())
    throw ShapeError("layerwise_drift: layer count mismatch");
  DriftProfile p;
  p.boundary = boundary;
  p.distance.reserve(full_states.size());
  for (size_t l = 0; l < full_states.size(); ++l) {
    const auto& a = full_states[l];
    const auto& b = ref_states[l];
    if (a.size() != b.size()) throw ShapeError("layerwise_drift: hidden width mismatch");
    double sum = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      sum += d * d;
    }
    p.distance.push_back(std::sqrt(sum));
  }
  return p;
}

DriftProfile capture_drift(const StateCapture& capture) {
  if (capture.full_states.empty()) throw ShapeError("capture_drift: empty capture");
  DriftProfile acc;
  acc.boundary = capture.boundary;
  acc.distance.assign(capture.full_states.front().size(), 0.0);
  for (size_t t = 0; t < capture.full_states.size(); ++t) {
    const DriftProfile step =
        layerwise_drift(capture.full_states[t], capture.cf_states[t], capture.boundary);
    for (size_t l = 0; l < acc.distance.size(); ++l) acc.distance[l] += step.distance[l];
  }
  const double n = static_cast<double>(capture.full_states.size());
  for (double& d : acc.distance) d /= n;
  return acc;
}

std::array<double, 3> stagewise_drift(const DriftProfile& profile) {
  const int L = static_cast<int>(profile.distance.size());
  if (L == 0) throw ShapeError("stagewise_drift: empty profile");
  std::array<double, 3> stages = {0.0, 0.0, 0.0};
  std::array<int, 3> counts = {0, 0, 0};
  for (int l = 0; l < L; ++l) {
    const int s = std::min(2, l * 3 / L);
    stages[static_cast<size_t>(s)] += profile.distance[static_cast<size_t>(l)];
    counts[static_cast<size_t>(s)] += 1;
  }
  for (int s = 0; s < 3; ++s)
    if (counts[static_cast<size_t>(s)] > 0) stages[static_cast<size_t>(s)] /= counts[static_cast<size_t>(s)];
  return stages;
}

std::string drift_profile_csv(const DriftProfile& profile) {
  std::ostringstream out;
  out << "layer,distance\n";
  for (size_t l = 0; l < profile.distance.size(); ++l) out << l << ',' << profile.distance[l] << '\n';
  return out.str();
}

// ============================================================================
// KL
// ============================================================================

namespace {

double log_sum_exp(std::span<const float> z) {
  double maxv = z[0];
  for (const float v : z) maxv = std::max(maxv, static_cast<double>(v));
  double sum = 0.0;
  for (const float v : z) sum += std::exp(static_cast<double>(v) - maxv);
  return maxv + std::log(sum);
}

}  // namespace

double next_token_kl(std::span<const float> z_full, std::span<const float> z_ref) {
  if (z_full.size() != z_ref.size()) throw ShapeError("next_token_kl: logit length mismatch");
  if (z_full.empty()) throw ShapeError("next_token_kl: empty logits");
  const double lse_p = log_sum_exp(z_full);
  const double lse_q = log_sum_exp(z_ref);
  double kl = 0.0;
  for (size_t v = 0; v < z_full.size(); ++v) {
    const double log_p = static_cast<double>(z_full[v]) - lse_p;
    const double log_q = static_cast<double>(z_ref[v]) - lse_q;
    kl += std::exp(log_p) * (log_p - log_q);
  }
  return std::max(kl, 0.0);  // clamp tiny negative rounding residue
}

double median(std::vector<double> values) {
  if (values.empty()) throw ShapeError("median: empty input");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

KLReport make_kl_report(const std::string& reference_name,
                        std::span<const std::vector<float>> z_full_steps,
                        std::span<const std::vector<float>> z_ref_steps) {
  if (z_full_steps.size() != z_ref_steps.size() || z_full_steps.empty())
    throw ShapeError("make_kl_report: step streams must be nonempty and equal length");
  KLReport r;
  r.reference = reference_name;
  r.steps = static_cast<long>(z_full_steps.size());
  std::vector<double> kls;
  kls.reserve(z_full_steps.size());
  for (size_t t = 0; t < z_full_steps.size(); ++t)
    kls.push_back(next_token_kl(z_full_steps[t], z_ref_steps[t]));
  r.kl_mean = std::accumulate(kls.begin(), kls.end(), 0.0) / static_cast<double>(kls.size());
  r.kl_median = median(std::move(kls));
  return r;
}

// ============================================================================
// Perturbation references
// ============================================================================

namespace {

/// Full L-layer causal replay from prepared prompt embeddings, recording the
/// next-token logits before each forced token is fed.
std::vector<std::vector<float>> replay_from_embeddings(const ToyModel& model, Matrix prompt_emb,
                                                       std::span<const int> forced_tokens) {
  const int L = model.config.num_layers;
  const int S = prompt_emb.rows;
  LayerCache cache = LayerCache::for_range(0, L, model.config.hidden_dim);
  ValidityMask causal = build_causal_mask(S);

  std::vector<int> positions(static_cast<size_t>(S));
  std::iota(positions.begin(), positions.end(), 0);
  Matrix h = forward_layers(model, 0, L, std::move(prompt_emb), cache, to_additive(causal), positions);

  std::vector<std::vector<float>> logits;
  logits.push_back(project_logits(model, h.row(h.rows - 1)));
  for (size_t t = 0; t + 1 < forced_tokens.size(); ++t) {
    const int pos = causal.key_count;
    causal = extend_mask(causal, pos, {}, MaskVariant::Causal);
    const int tok = forced_tokens[t];
    Matrix row = embed_tokens(model, std::span<const int>(&tok, 1));
    const std::vector<int> p = {pos};
    Matrix out = forward_layers(model, 0, L, std::move(row), cache, to_additive(causal.last_rows(1)), p);
    logits.push_back(project_logits(model, out.row(0)));
  }
  return logits;
}

}  // namespace

PerturbationReference perturbation_reference(const ToyModel& model, const PromptLayout& layout,
                                             PerturbKind kind, uint64_t seed,
                                             std::span<const int> forced_tokens, float noise_std) {
  layout.validate();
  if (forced_tokens.empty()) throw ShapeError("perturbation_reference: forced token path is empty");

  PerturbationReference ref;
  if (layout.image_positions.empty()) {
    ref.degenerate = true;
    ref.step_logits = replay_from_embeddings(model, embed_tokens(model, layout.tokens), forced_tokens);
    return ref;
  }

  Rng rng(seed);
  if (kind == PerturbKind::Shuffle) {
    std::vector<int> tokens = layout.tokens;
    std::vector<int> image_tokens;
    image_tokens.reserve(layout.image_positions.size());
    for (const int p : layout.image_positions) image_tokens.push_back(tokens[static_cast<size_t>(p)]);
    rng.shuffle(image_tokens);
    for (size_t i = 0; i < layout.image_positions.size(); ++i)
      tokens[static_cast<size_t>(layout.image_positions[i])] = image_tokens[i];
    ref.step_logits = replay_from_embeddings(model, embed_tokens(model, tokens), forced_tokens);
  } else {
    Matrix emb = embed_tokens(model, layout.tokens);
    for (const int p : layout.image_positions) {
      auto row = emb.row(p);
      for (float& v : row) v += noise_std * rng.gaussian();
    }
    ref.step_logits = replay_from_embeddings(model, std::move(emb), forced_tokens);
  }
  return ref;
}

// ============================================================================
// Cost accounting
// ============================================================================

RunCost run_cost(const DecodeTrace& trace) {
  RunCost c;
  for (const StepRecord& s : trace.steps) c.steps.push_back({s.layer_evals, s.step_ms});
  return c;
}

RunCost run_cost(const TraceSummary& trace) {
  RunCost c;
  for (const TraceStepSummary& s : trace.steps) c.steps.push_back({s.layer_evals, s.step_ms});
  return c;
}

CostReport cost_report(std::span<const RunCost> sira_runs, std::span<const RunCost> baseline_runs) {
  if (sira_runs.empty() || baseline_runs.empty())
    throw ShapeError("cost_report: need at least one run per side");

  auto per_token = [](std::span<const RunCost> runs) {
    long evals = 0;
    long steps = 0;
    for (const RunCost& r : runs) {
      for (const StepCost& s : r.steps) evals += s.layer_evals;
      steps += static_cast<long>(r.steps.size());
    }
    if (steps == 0) throw ShapeError("cost_report: run with no steps");
    return static_cast<double>(evals) / static_cast<double>(steps);
  };

  CostReport report;
  report.layer_eval_ratio = per_token(sira_runs) / per_token(baseline_runs);

  std::vector<double> ratios;
  const size_t pairs = std::min(sira_runs.size(), baseline_runs.size());
  for (size_t r = 0; r < pairs; ++r) {
    const size_t steps = std::min(sira_runs[r].steps.size(), baseline_runs[r].steps.size());
    for (size_t t = 0; t < steps; ++t) {
      const double base = baseline_runs[r].steps[t].step_ms;
      if (base > 0.0) ratios.push_back(sira_runs[r].steps[t].step_ms / base);
    }
  }
  report.wallclock_ratio = ratios.empty() ? 0.0 : median(std::move(ratios));
  return report;
}

}  // namespace sira
