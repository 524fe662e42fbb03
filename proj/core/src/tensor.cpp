#include "sira/tensor.hpp"

#include <cmath>

namespace sira {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(a.cols) + " vs " +
                     std::to_string(b.rows) + ")");
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const float* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
    float* orow = out.data.data() + static_cast<size_t>(i) * b.cols;
    for (int j = 0; j < b.cols; ++j) {
      float acc = 0.0f;
      for (int k = 0; k < a.cols; ++k) {
        acc += arow[k] * b.data[static_cast<size_t>(k) * b.cols + j];
      }
      orow[j] = acc;
    }
  }
  return out;
}

std::vector<float> softmax_row(std::span<const float> row, std::span<const float> additive_mask_row) {
  if (row.size() != additive_mask_row.size())
    throw ShapeError("softmax_row: score/mask length mismatch");
  const size_t n = row.size();

  bool any_valid = false;
  float maxval = 0.0f;
  for (size_t i = 0; i < n; ++i) {
    if (is_masked_value(additive_mask_row[i])) continue;
    const float s = row[i] + additive_mask_row[i];
    if (!any_valid || s > maxval) maxval = s;
    any_valid = true;
  }
  if (!any_valid) throw DegenerateRowError("softmax_row: every key is masked for this query");

  std::vector<float> out(n, 0.0f);
  float denom = 0.0f;
  for (size_t i = 0; i < n; ++i) {
    if (is_masked_value(additive_mask_row[i])) continue;
    out[i] = std::exp(row[i] + additive_mask_row[i] - maxval);
    denom += out[i];
  }
  for (size_t i = 0; i < n; ++i) out[i] /= denom;
  return out;
}

std::vector<float> rms_normalize(std::span<const float> row, std::span<const float> gain, float eps) {
  if (row.size() != gain.size()) throw ShapeError("rms_normalize: row/gain length mismatch");
  float sumsq = 0.0f;
  for (const float v : row) sumsq += v * v;
  const float inv = 1.0f / std::sqrt(sumsq / static_cast<float>(row.size()) + eps);
  std::vector<float> out(row.size());
  for (size_t i = 0; i < row.size(); ++i) out[i] = row[i] * inv * gain[i];
  return out;
}

float dot(std::span<const float> a, std::span<const float> b) {
  float acc = 0.0f;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace sira
