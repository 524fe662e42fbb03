#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <utility>

#include "sira/masking.hpp"
#include "sira/rng.hpp"

using namespace sira;

namespace {

/// Brute-force oracle: applies the counterfactual validity definition
/// entry-for-entry with a plain double loop.
ValidityMask brute_force_cf(int n, const std::vector<int>& image_positions) {
  std::set<int> img(image_positions.begin(), image_positions.end());
  ValidityMask m;
  m.query_count = n;
  m.key_count = n;
  m.valid.assign(static_cast<size_t>(n) * n, 0);
  for (int q = 0; q < n; ++q)
    for (int k = 0; k < n; ++k)
      m.set(q, k, k <= q && !img.count(q) && !img.count(k));
  return m;
}

}  // namespace

TEST_CASE("causal mask S=1") {
  const ValidityMask m = build_causal_mask(1);
  CHECK(m.at(0, 0));
}

TEST_CASE("causal mask S=3 definition") {
  const ValidityMask m = build_causal_mask(3);
  const std::set<std::pair<int, int>> expected = {{0, 0}, {1, 0}, {1, 1}, {2, 0}, {2, 1}, {2, 2}};
  for (int q = 0; q < 3; ++q)
    for (int k = 0; k < 3; ++k) CHECK(m.at(q, k) == (expected.count({q, k}) > 0));
}

TEST_CASE("causal mask future key invalid") {
  CHECK_FALSE(build_causal_mask(2).at(0, 1));
}

TEST_CASE("cf mask hand example S=4 P_img={1}") {
  const ValidityMask cf = build_cf_mask(build_causal_mask(4), std::vector<int>{1});
  const std::set<std::pair<int, int>> expected = {{0, 0}, {2, 0}, {2, 2}, {3, 0}, {3, 2}, {3, 3}};
  for (int q = 0; q < 4; ++q)
    for (int k = 0; k < 4; ++k) CHECK(cf.at(q, k) == (expected.count({q, k}) > 0));
}

TEST_CASE("cf mask empty image set equals causal") {
  const ValidityMask causal = build_causal_mask(5);
  const ValidityMask cf = build_cf_mask(causal, {});
  CHECK(cf.valid == causal.valid);
}

TEST_CASE("cf mask all image positions blanks everything") {
  std::vector<int> all = {0, 1, 2};
  const ValidityMask cf = build_cf_mask(build_causal_mask(3), all);
  for (const uint8_t v : cf.valid) CHECK(v == 0);
}

TEST_CASE("cf mask index out of range") {
  CHECK_THROWS_AS(build_cf_mask(build_causal_mask(3), std::vector<int>{3}), ConfigError);
}

TEST_CASE("extend cf mask hand example") {
  const std::vector<int> img = {1};
  ValidityMask cf = build_cf_mask(build_causal_mask(4), img);
  cf = extend_mask(cf, 4, img, MaskVariant::Counterfactual);
  CHECK(cf.query_count == 5);
  CHECK(cf.key_count == 5);
  // new row valid at {0,2,3,4}
  CHECK(cf.at(4, 0));
  CHECK_FALSE(cf.at(4, 1));
  CHECK(cf.at(4, 2));
  CHECK(cf.at(4, 3));
  CHECK(cf.at(4, 4));
}

TEST_CASE("extend causal mask") {
  ValidityMask m = build_causal_mask(4);
  m = extend_mask(m, 4, {}, MaskVariant::Causal);
  for (int k = 0; k <= 4; ++k) CHECK(m.at(4, k));
  for (int q = 0; q < 4; ++q) CHECK_FALSE(m.at(q, 4));
}

TEST_CASE("extend with discontinuous position") {
  const ValidityMask m = build_causal_mask(4);
  CHECK_THROWS_AS(extend_mask(m, 6, {}, MaskVariant::Causal), SequenceError);
}

TEST_CASE("to_additive values") {
  ValidityMask m;
  m.query_count = 1;
  m.key_count = 2;
  m.valid = {1, 0};
  const AdditiveMask a = to_additive(m);
  CHECK(a.bias[0] == 0.0f);
  CHECK(a.bias[1] == kMaskSentinel);

  const AdditiveMask all_valid = to_additive(build_causal_mask(2));
  CHECK(all_valid.bias[0] == 0.0f);
  CHECK(all_valid.bias[1] == kMaskSentinel);  // (0,1) is causally invalid
  CHECK(all_valid.bias[2] == 0.0f);
  CHECK(all_valid.bias[3] == 0.0f);
}

TEST_CASE("cf validity implies causal validity") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.uniform_int(1, 24);
    std::vector<int> img;
    for (int p = 0; p < n; ++p)
      if (rng.uniform() < 0.3) img.push_back(p);
    const ValidityMask causal = build_causal_mask(n);
    const ValidityMask cf = build_cf_mask(causal, img);
    for (int q = 0; q < n; ++q)
      for (int k = 0; k < n; ++k)
        if (cf.at(q, k)) CHECK(causal.at(q, k));
  }
}

TEST_CASE("cf mask matches brute-force double loop") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(1, 32);
    std::vector<int> img;
    for (int p = 0; p < n; ++p)
      if (rng.uniform() < 0.35) img.push_back(p);
    const ValidityMask got = build_cf_mask(build_causal_mask(n), img);
    const ValidityMask want = brute_force_cf(n, img);
    CHECK(got.valid == want.valid);
  }
}

TEST_CASE("valid-entry count matches both-endpoints-outside-P_img count") {
  Rng rng(29);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.uniform_int(1, 32);
    std::set<int> img;
    for (int p = 0; p < n; ++p)
      if (rng.uniform() < 0.4) img.insert(p);
    const ValidityMask cf =
        build_cf_mask(build_causal_mask(n), std::vector<int>(img.begin(), img.end()));
    long got = 0;
    for (const uint8_t v : cf.valid) got += v;
    long want = 0;
    for (int q = 0; q < n; ++q)
      for (int k = 0; k <= q; ++k)
        if (!img.count(q) && !img.count(k)) ++want;
    CHECK(got == want);
  }
}

TEST_CASE("incremental extension equals from-scratch rebuild") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const int s = rng.uniform_int(1, 12);
    std::vector<int> img;
    for (int p = 0; p < s; ++p)
      if (rng.uniform() < 0.4) img.push_back(p);

    ValidityMask causal = build_causal_mask(s);
    ValidityMask cf = build_cf_mask(causal, img);
    const int steps = rng.uniform_int(1, 16);
    for (int t = 0; t < steps; ++t) {
      const int pos = s + t;
      causal = extend_mask(causal, pos, img, MaskVariant::Causal);
      cf = extend_mask(cf, pos, img, MaskVariant::Counterfactual);
      CHECK(causal.valid == build_causal_mask(pos + 1).valid);
      CHECK(cf.valid == build_cf_mask(build_causal_mask(pos + 1), img).valid);
    }
  }
}
