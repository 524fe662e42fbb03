#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sira/rng.hpp"
#include "sira/tensor.hpp"

using namespace sira;

namespace {

Matrix random_matrix(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (float& v : m.data) v = rng.gaussian();
  return m;
}

}  // namespace

TEST_CASE("matmul identity") {
  Rng rng(3);
  const Matrix m = random_matrix(3, 3, rng);
  const Matrix out = matmul(Matrix::identity(3), m);
  for (size_t i = 0; i < m.data.size(); ++i) CHECK(out.data[i] == m.data[i]);
}

TEST_CASE("matmul hand example") {
  Matrix a(2, 2);
  a.data = {1, 2, 3, 4};
  Matrix b(2, 1);
  b.data = {0, 1};
  const Matrix out = matmul(a, b);
  CHECK(out.rows == 2);
  CHECK(out.cols == 1);
  CHECK(out.at(0, 0) == 2.0f);
  CHECK(out.at(1, 0) == 4.0f);
}

TEST_CASE("matmul 1x1") {
  Matrix a(1, 1);
  a.data = {2};
  Matrix b(1, 1);
  b.data = {3};
  CHECK(matmul(a, b).at(0, 0) == 6.0f);
}

TEST_CASE("matmul shape error") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 2)), ShapeError);
}

TEST_CASE("matmul associativity within 1e-4") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = random_matrix(4, 5, rng);
    const Matrix b = random_matrix(5, 3, rng);
    const Matrix c = random_matrix(3, 6, rng);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    for (size_t i = 0; i < left.data.size(); ++i)
      CHECK(std::fabs(left.data[i] - right.data[i]) < 1e-4f);
  }
}

TEST_CASE("matmul determinism") {
  Rng rng(9);
  const Matrix a = random_matrix(7, 8, rng);
  const Matrix b = random_matrix(8, 5, rng);
  const Matrix x = matmul(a, b);
  const Matrix y = matmul(a, b);
  CHECK(x.data == y.data);
}

TEST_CASE("softmax symmetric") {
  const std::vector<float> row = {0, 0};
  const std::vector<float> mask = {0, 0};
  const auto p = softmax_row(row, mask);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax sentinel mask") {
  const std::vector<float> row = {5, 5};
  const std::vector<float> mask = {0, kMaskSentinel};
  const auto p = softmax_row(row, mask);
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(p[1] < 1e-6f);
}

TEST_CASE("softmax single entry") {
  const std::vector<float> row = {1};
  const std::vector<float> mask = {0};
  CHECK(softmax_row(row, mask)[0] == 1.0f);
}

TEST_CASE("softmax degenerate row") {
  const std::vector<float> row = {1, 2};
  const std::vector<float> mask = {kMaskSentinel, kMaskSentinel};
  CHECK_THROWS_AS(softmax_row(row, mask), DegenerateRowError);
}

TEST_CASE("softmax is a probability vector") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(1, 12);
    std::vector<float> row(static_cast<size_t>(n));
    std::vector<float> mask(static_cast<size_t>(n), 0.0f);
    for (float& v : row) v = rng.gaussian() * 4.0f;
    // mask a strict subset
    for (int i = 1; i < n; ++i)
      if (rng.uniform() < 0.3) mask[static_cast<size_t>(i)] = kMaskSentinel;
    const auto p = softmax_row(row, mask);
    float sum = 0.0f;
    for (size_t i = 0; i < p.size(); ++i) {
      CHECK(p[i] >= 0.0f);
      if (is_masked_value(mask[i])) CHECK(p[i] < 1e-6f);
      sum += p[i];
    }
    CHECK(std::fabs(sum - 1.0f) < 1e-6f);
  }
}

TEST_CASE("rms_normalize zero vector") {
  const std::vector<float> row = {0, 0, 0};
  const std::vector<float> gain = {1, 1, 1};
  for (const float v : rms_normalize(row, gain, 1e-6f)) CHECK(v == 0.0f);
}

TEST_CASE("rms_normalize hand example") {
  const std::vector<float> row = {3, 4};
  const std::vector<float> gain = {1, 1};
  const auto out = rms_normalize(row, gain, 0.0f);
  CHECK(out[0] == doctest::Approx(0.84853).epsilon(1e-4));
  CHECK(out[1] == doctest::Approx(1.13137).epsilon(1e-4));
}

TEST_CASE("rms_normalize zero gain") {
  const std::vector<float> row = {1, -2, 5};
  const std::vector<float> gain = {0, 0, 0};
  for (const float v : rms_normalize(row, gain, 1e-5f)) CHECK(v == 0.0f);
}
