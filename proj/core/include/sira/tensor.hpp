#pragma once

#include <span>
#include <vector>

#include "sira/errors.hpp"

namespace sira {

/// Additive-mask sentinel: invalid attention entries receive this value.
/// Finite on purpose, so masked scores never produce (-inf)-(-inf) NaNs.
inline constexpr float kMaskSentinel = -1e9f;

inline bool is_masked_value(float m) { return m <= kMaskSentinel * 0.5f; }

// ============================================================================
// Matrix
// ============================================================================

/// Dense row-major float32 matrix. All kernels in this module use a fixed
/// left-to-right summation order per output element, so repeated runs are
/// bit-identical.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;  // row-major, rows*cols entries

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0f) {}

  float& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  float at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  std::span<float> row(int r) { return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
  std::span<const float> row(int r) const {
    return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }

  void append_row(std::span<const float> values) {
    if (static_cast<int>(values.size()) != cols)
      throw ShapeError("append_row: expected " + std::to_string(cols) + " values, got " +
                       std::to_string(values.size()));
    data.insert(data.end(), values.begin(), values.end());
    ++rows;
  }

  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0f;
    return m;
  }
};

// ============================================================================
// Kernels
// ============================================================================

/// Standard product a*b. Requires a.cols == b.rows. Each output element is a
/// left-to-right dot product over the inner dimension.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Numerically stable softmax of (row + mask) with max subtraction.
/// mask entries are 0 for valid keys and kMaskSentinel for invalid ones.
/// Throws DegenerateRowError if every entry is masked.
std::vector<float> softmax_row(std::span<const float> row, std::span<const float> additive_mask_row);

/// Root-mean-square normalization: out_i = row_i / sqrt(mean(row^2) + eps) * gain_i.
std::vector<float> rms_normalize(std::span<const float> row, std::span<const float> gain, float eps);

/// Left-to-right dot product of two equal-length spans.
float dot(std::span<const float> a, std::span<const float> b);

}  // namespace sira
