#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sira/masking.hpp"
#include "sira/tensor.hpp"

namespace sira {

// ============================================================================
// Configuration
// ============================================================================

struct ModelConfig {
  int num_layers = 0;
  int hidden_dim = 0;
  int num_heads = 0;
  int head_dim = 0;  // hidden_dim / num_heads
  int mlp_dim = 0;
  int vocab_size = 0;
  int max_seq_len = 0;
  float norm_eps = 1e-5f;

  void validate() const;  // throws ConfigError

  static ModelConfig make(int layers, int dim, int heads, int mlp, int vocab, int max_seq,
                          float eps = 1e-5f) {
    ModelConfig c;
    c.num_layers = layers;
    c.hidden_dim = dim;
    c.num_heads = heads;
    c.head_dim = heads > 0 ? dim / heads : 0;
    c.mlp_dim = mlp;
    c.vocab_size = vocab;
    c.max_seq_len = max_seq;
    c.norm_eps = eps;
    return c;
  }
};

// ============================================================================
// Weights
// ============================================================================

/// One pre-norm transformer block. Projection matrices use the activation-row
/// convention: y = x * W with W shaped (in, out).
struct LayerWeights {
  Matrix attn_norm_gain;  // 1 x d
  Matrix wq, wk, wv, wo;  // d x d
  Matrix mlp_norm_gain;   // 1 x d
  Matrix mlp_in;          // d x mlp_dim
  Matrix mlp_out;         // mlp_dim x d
};

/// L-layer decoder-only transformer over a unified vocabulary. Text and
/// image-feature tokens share token_embedding; image tokens are ordinary
/// vocabulary entries in a reserved ID range. Immutable once constructed
/// (training builds a new set of values in place via the trainer only).
struct ToyModel {
  ModelConfig config;
  Matrix token_embedding;    // V x d
  std::vector<LayerWeights> layers;
  Matrix final_norm_gain;    // 1 x d
  Matrix output_projection;  // V x d, logits = W_out * Norm(h_last)

  /// All weight matrices in declaration order; single source of truth for
  /// serialization, checksums, the optimizer, and gradient checks.
  std::vector<std::pair<std::string, Matrix*>> weight_entries();
  std::vector<std::pair<std::string, const Matrix*>> weight_entries() const;
};

// ============================================================================
// KV cache
// ============================================================================

/// Per-layer stored key/value rows for a contiguous layer range [first_layer,
/// first_layer + layers.size()). Row r holds absolute sequence position r.
struct LayerCache {
  struct KV {
    Matrix keys;    // positions x d
    Matrix values;  // positions x d
  };

  int first_layer = 0;
  std::vector<KV> layers;

  static LayerCache for_range(int layer_begin, int layer_end, int hidden_dim);

  int length() const { return layers.empty() ? 0 : layers.front().keys.rows; }
  int layer_count() const { return static_cast<int>(layers.size()); }
  KV& kv(int layer) { return layers[static_cast<size_t>(layer - first_layer)]; }
  const KV& kv(int layer) const { return layers[static_cast<size_t>(layer - first_layer)]; }

  /// Diagnostic hook: zero the key/value rows at the given absolute positions
  /// in every layer of this cache.
  void zero_rows(std::span<const int> positions);
};

// ============================================================================
// Operations
// ============================================================================

/// Seeded deterministic initialization; weights are gaussian scaled by
/// 1/sqrt(hidden_dim), norm gains start at 1. Same (config, seed) yields a
/// bit-identical model.
ToyModel init_model(const ModelConfig& config, uint64_t seed);

/// Embedding lookup for a token sequence: one row per token.
Matrix embed_tokens(const ToyModel& model, std::span<const int> tokens);

/// Cached forward through layers [layer_begin, layer_end) for n new rows.
/// The additive mask must cover (cache length + n) keys for each of the n
/// query rows; positions give the rows' absolute sequence indices for rotary
/// encoding. Appends n key/value rows to every layer in range. A query row
/// whose mask entries are all invalid produces a zero attention output (its
/// MLP still runs); that convention exists for counterfactual image-position
/// rows, which are never read back by text queries.
/// If layer_capture is non-null, the last row's hidden state after each layer
/// in range is appended to it.
Matrix forward_layers(const ToyModel& model, int layer_begin, int layer_end, Matrix hidden,
                      LayerCache& cache, const AdditiveMask& mask, std::span<const int> positions,
                      std::vector<std::vector<float>>* layer_capture = nullptr);

/// z = W_out * Norm(hidden_last). Pure.
std::vector<float> project_logits(const ToyModel& model, std::span<const float> hidden_last);

// ============================================================================
// Serialization
// ============================================================================

/// Binary little-endian weight file: magic "SIRATOY1", config fields as
/// 32-bit words, then every weight matrix in declaration order as raw
/// float32. Round-trips bit-exactly.
void save_model(const ToyModel& model, const std::string& path);
ToyModel load_model(const std::string& path);

/// FNV-1a over config and weight bytes.
uint64_t model_checksum(const ToyModel& model);

}  // namespace sira
