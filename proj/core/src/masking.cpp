#include "sira/masking.hpp"

#include <algorithm>

namespace sira {

bool PromptLayout::is_image_position(int pos) const {
  return std::binary_search(image_positions.begin(), image_positions.end(), pos);
}

void PromptLayout::validate() const {
  if (tokens.empty()) throw ConfigError("PromptLayout: empty prompt");
  int prev = -1;
  for (const int p : image_positions) {
    if (p < 0 || p >= length())
      throw ConfigError("PromptLayout: image position " + std::to_string(p) + " outside prompt");
    if (p <= prev) throw ConfigError("PromptLayout: image positions must be sorted and distinct");
    prev = p;
  }
}

ValidityMask ValidityMask::last_rows(int n) const {
  if (n < 0 || n > query_count) throw ShapeError("last_rows: bad row count");
  ValidityMask out;
  out.query_count = n;
  out.key_count = key_count;
  const size_t offset = static_cast<size_t>(query_count - n) * key_count;
  out.valid.assign(valid.begin() + offset, valid.end());
  return out;
}

ValidityMask build_causal_mask(int prompt_len) {
  if (prompt_len < 1) throw ConfigError("build_causal_mask: prompt length must be >= 1");
  ValidityMask m;
  m.query_count = prompt_len;
  m.key_count = prompt_len;
  m.valid.assign(static_cast<size_t>(prompt_len) * prompt_len, 0);
  for (int q = 0; q < prompt_len; ++q)
    for (int k = 0; k <= q; ++k) m.set(q, k, true);
  return m;
}

ValidityMask build_cf_mask(const ValidityMask& causal, std::span<const int> image_positions) {
  for (const int p : image_positions)
    if (p < 0 || p >= causal.query_count || p >= causal.key_count)
      throw ConfigError("build_cf_mask: image position " + std::to_string(p) + " out of range");

  std::vector<uint8_t> is_img(static_cast<size_t>(std::max(causal.query_count, causal.key_count)), 0);
  for (const int p : image_positions) is_img[static_cast<size_t>(p)] = 1;

  ValidityMask m = causal;
  for (int q = 0; q < m.query_count; ++q)
    for (int k = 0; k < m.key_count; ++k)
      if (is_img[static_cast<size_t>(q)] || is_img[static_cast<size_t>(k)]) m.set(q, k, false);
  return m;
}

ValidityMask extend_mask(const ValidityMask& mask, int new_query_position,
                         std::span<const int> image_positions, MaskVariant variant) {
  if (new_query_position != mask.key_count)
    throw SequenceError("extend_mask: expected position " + std::to_string(mask.key_count) +
                        ", got " + std::to_string(new_query_position));

  const int n = mask.key_count + 1;
  ValidityMask out;
  out.query_count = n;
  out.key_count = n;
  out.valid.assign(static_cast<size_t>(n) * n, 0);

  // Old rows keep their entries; the appended key column is invalid for them
  // (the new position is in their future).
  for (int q = 0; q < mask.query_count; ++q)
    for (int k = 0; k < mask.key_count; ++k) out.set(q, k, mask.at(q, k));

  // New query row: causally valid at every key; the counterfactual variant
  // additionally blocks image-token key columns.
  for (int k = 0; k < n; ++k) out.set(n - 1, k, true);
  if (variant == MaskVariant::Counterfactual) {
    for (const int p : image_positions) {
      if (p >= 0 && p < n) out.set(n - 1, p, false);
    }
  }
  return out;
}

AdditiveMask to_additive(const ValidityMask& mask) {
  AdditiveMask a;
  a.query_count = mask.query_count;
  a.key_count = mask.key_count;
  a.bias.resize(mask.valid.size());
  for (size_t i = 0; i < mask.valid.size(); ++i)
    a.bias[i] = mask.valid[i] ? 0.0f : kMaskSentinel;
  return a;
}

}  // namespace sira
