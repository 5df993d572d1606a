// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "arvis/numerics.hpp"
#include "fd_checks.hpp"

using namespace arvis;
using namespace arvis::testing;

TEST(Numerics, MatmulMatchesNaive) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = 1 + rng.below(9), k = 1 + rng.below(9), n = 1 + rng.below(9);
    auto a = random_tensor<double>(rng, m, k), b = random_tensor<double>(rng, k, n);
    FlopCounter f;
    auto c = matmul(a, b, &f);
    EXPECT_EQ(f.flops, 2 * m * k * n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t t = 0; t < k; ++t) s += a(i, t) * b(t, j);
        EXPECT_NEAR(c(i, j), s, 1e-12);
      }
    }
  }
}

TEST(Numerics, MatmulShapeMismatchThrows) {
  Tensor2D<float> a(2, 3), b(4, 2);
  EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Numerics, SoftmaxSumsToOneAndHandlesLargeLogits) {
  std::vector<double> x{1000.0, 999.0, -1000.0};
  auto p = softmax<double>(x);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
  EXPECT_GT(p[0], p[1]);
  EXPECT_NEAR(p[2], 0.0, 1e-300);
  EXPECT_THROW(softmax<double>(x, 0.0), std::exception);
}

TEST(Numerics, RmsNormUnitRms) {
  std::vector<double> x{3.0, -4.0, 0.0, 1.0}, g(4, 1.0);
  auto y = rms_norm<double>(x, g);
  double ms = 0;
  for (double v : y) ms += v * v;
  EXPECT_NEAR(ms / 4, 1.0, 1e-5);
}

TEST(Numerics, AttentionIsCausal) {
  Rng rng(9);
  auto q = random_tensor<double>(rng, 5, 8), k = random_tensor<double>(rng, 5, 8),
       v = random_tensor<double>(rng, 5, 8);
  auto base = causal_attention(q, k, v, 2).out;
  k(4, 0) += 5.0;
  v(4, 3) -= 2.0;
  auto changed = causal_attention(q, k, v, 2).out;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(base(i, j), changed(i, j));
  }
}

TEST(Numerics, AllFinite) {
  std::vector<float> ok{1, 2}, bad{1, std::nanf("")};
  EXPECT_TRUE(all_finite<float>(ok));
  EXPECT_FALSE(all_finite<float>(bad));
}

class PrimitiveGradient : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
  const auto [name, check] = primitive_checks()[static_cast<std::size_t>(GetParam())];
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const double err = check(seed);
    ASSERT_LE(err, 1e-3) << name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient, ::testing::Range(0, 6),
                         [](const auto& info) {
                           return primitive_checks()[static_cast<std::size_t>(info.param)].first;
                         });
