#pragma once

#include <span>
#include <vector>

#include "sira/tensor.hpp"

namespace sira {

// ============================================================================
// Prompt layout
// ============================================================================

/// Tokenized prompt plus the fixed set of image-token positions (0-based).
/// image_positions never changes during a decode session; generated tokens
/// are always text positions.
struct PromptLayout {
  std::vector<int> tokens;            // x_1..x_S
  std::vector<int> image_positions;   // sorted, subset of [0, S)
  int eos_token = 1;

  int length() const { return static_cast<int>(tokens.size()); }
  bool is_image_position(int pos) const;
  void validate() const;  // throws ConfigError on out-of-range positions
};

// ============================================================================
// Validity and additive masks
// ============================================================================

enum class MaskVariant { Causal, Counterfactual };

/// Per-(query,key) boolean attention validity. Square over the current
/// sequence length: query row q corresponds to absolute position q.
struct ValidityMask {
  int query_count = 0;
  int key_count = 0;
  std::vector<uint8_t> valid;  // row-major query_count * key_count

  bool at(int q, int k) const { return valid[static_cast<size_t>(q) * key_count + k] != 0; }
  void set(int q, int k, bool v) { valid[static_cast<size_t>(q) * key_count + k] = v ? 1 : 0; }

  /// Copy of the trailing n query rows (an n x key_count mask), as consumed
  /// by an incremental forward over n new positions.
  ValidityMask last_rows(int n) const;
};

/// 0 where valid, kMaskSentinel where invalid.
struct AdditiveMask {
  int query_count = 0;
  int key_count = 0;
  std::vector<float> bias;

  std::span<const float> row(int q) const {
    return {bias.data() + static_cast<size_t>(q) * key_count, static_cast<size_t>(key_count)};
  }
};

// ============================================================================
// Construction
// ============================================================================

/// Lower-triangular causal validity over an S-token prompt.
ValidityMask build_causal_mask(int prompt_len);

/// Counterfactual validity: valid iff causally valid and neither the query
/// nor the key position is an image-token position. Image-position query
/// rows come out entirely invalid; downstream attention treats those rows
/// as zero-output rather than as an error.
ValidityMask build_cf_mask(const ValidityMask& causal, std::span<const int> image_positions);

/// Append one query row (and its key column) for a newly generated token at
/// absolute position new_query_position == current key_count. For the
/// counterfactual variant the new row is additionally blocked at image-token
/// key columns; the query-side condition holds automatically because
/// generated positions are text positions.
ValidityMask extend_mask(const ValidityMask& mask, int new_query_position,
                         std::span<const int> image_positions, MaskVariant variant);

/// Elementwise valid -> 0, invalid -> kMaskSentinel.
AdditiveMask to_additive(const ValidityMask& mask);

}  // namespace sira
