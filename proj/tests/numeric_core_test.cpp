// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "moelab/rng.hpp"
#include "moelab/tensor.hpp"

namespace moelab {
namespace {

Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Tensor t(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) t(i, j++) = v;
    ++i;
  }
  return t;
}

Tensor random_tensor(RngStream& rng, Eigen::Index m, Eigen::Index n) {
  Tensor t(m, n);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = 2 * rng.next_uniform() - 1;
  return t;
}

TEST(Matmul, IdentityAndProjector) {
  const Tensor b = from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Tensor::Identity(2, 2), b), b);
  EXPECT_EQ(matmul(from_rows({{1, 0}, {0, 0}}), from_rows({{5, 6}, {7, 8}})), from_rows({{5, 6}, {0, 0}}));
}

TEST(Matmul, TwoByTwoProduct) {
  EXPECT_EQ(matmul(from_rows({{1, 2}, {3, 4}}), from_rows({{5, 6}, {7, 8}})),
            from_rows({{19, 22}, {43, 50}}));
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::Zero(2, 3), Tensor::Zero(2, 3)), ShapeError);
}

TEST(Matmul, MatchesLeftToRightTripleLoop) {
  RngStream rng(7);
  const Tensor a = random_tensor(rng, 5, 9), b = random_tensor(rng, 9, 4);
  const Tensor c = matmul(a, b);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0;
      for (int p = 0; p < 9; ++p) s += a(i, p) * b(p, j);
      EXPECT_EQ(c(i, j), s);
    }
}

TEST(Matmul, RowBlockGivesSameBitsAsWholeProduct) {
  RngStream rng(11);
  const Tensor a = random_tensor(rng, 6, 7), b = random_tensor(rng, 7, 5);
  const Tensor whole = matmul(a, b);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(matmul(a.row(i), b), whole.row(i));
}

TEST(Matmul, AssociativeOnRandomChains) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RngStream rng(seed);
    const Tensor a = random_tensor(rng, 4, 6), b = random_tensor(rng, 6, 3), c = random_tensor(rng, 3, 5);
    const Tensor left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    EXPECT_LE((left - right).norm(), 1e-9 * std::max(1.0, right.norm())) << "seed " << seed;
  }
}

TEST(Softmax, UniformInput) {
  const Tensor s = softmax(RowVec::Zero(3));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s(0, i), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  RowVec v(2);
  v << 1000, 0;
  const Tensor s = softmax(v);
  EXPECT_EQ(s(0, 0), 1.0);
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_TRUE(all_finite(s));
}

TEST(Softmax, TwoLogitOracle) {
  RowVec v(2);
  v << 2, 1;
  const Tensor s = softmax(v);
  const double e2 = std::exp(2.0), e1 = std::exp(1.0);
  EXPECT_NEAR(s(0, 0), e2 / (e2 + e1), 1e-12);
  EXPECT_NEAR(s(0, 0), 0.73105857863, 1e-11);
  EXPECT_NEAR(s(0, 1), 0.26894142137, 1e-11);
}

TEST(Softmax, EmptyInputThrows) { EXPECT_THROW(softmax(RowVec(0)), ShapeError); }

TEST(Softmax, SumsToOne) {
  RngStream rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor v = random_tensor(rng, 1, 1 + trial % 17) * 30.0;
    const Tensor s = softmax(v);
    EXPECT_NEAR(s.sum(), 1.0, 1e-12);
    EXPECT_GT(s.minCoeff(), 0.0);
  }
}

TEST(Softmax, ShiftInvariantForExactShifts) {
  // Dyadic entries and integer shifts keep v + c exactly representable, so
  // max-subtraction reproduces the same differences bit for bit.
  RngStream rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    RowVec v(8);
    for (int i = 0; i < 8; ++i) v(i) = static_cast<double>(rng.next_below(4096)) / 256.0 - 8.0;
    const double c = static_cast<double>(rng.next_below(2001)) - 1000.0;
    const RowVec shifted = v.array() + c;
    EXPECT_EQ(softmax(v), softmax(shifted));
  }
}

TEST(Argmax, TiesGoToLowestIndex) {
  RowVec v(4);
  v << 1, 3, 3, 2;
  EXPECT_EQ(argmax(v), 1);
}

TEST(Rng, SameSeedAndPositionGiveSameDraw) {
  RngStream a(42, 17), b(42, 17);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, PositionCanBeSkippedTo) {
  RngStream a(9);
  for (int i = 0; i < 10; ++i) a.next_u64();
  RngStream b(9, 10);
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformStaysInsideOpenInterval) {
  RngStream rng(1);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.next_uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, NextBelowCoversRangeUniformly) {
  RngStream rng(2);
  std::vector<int> hits(6);
  for (int i = 0; i < 60000; ++i) ++hits[rng.next_below(6)];
  for (int h : hits) EXPECT_NEAR(h, 10000, 500);
}

TEST(Rng, SplitStreamsDiffer) {
  const RngStream parent(123);
  RngStream a = parent.split(0), b = parent.split(1);
  EXPECT_NE(a.next_u64(), b.next_u64());
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 1));
}

TEST(SampleNormal, ZeroSigmaGivesZeros) {
  RngStream rng(4);
  EXPECT_EQ(sample_normal(rng, 0.0, 5), Vec::Zero(5));
}

TEST(SampleNormal, NegativeSigmaThrows) {
  RngStream rng(4);
  EXPECT_THROW(sample_normal(rng, -1.0, 5), DomainError);
}

TEST(SampleNormal, DeterministicAndAdvancesByN) {
  RngStream a(8), b(8);
  EXPECT_EQ(sample_normal(a, 0.3, 100), sample_normal(b, 0.3, 100));
  EXPECT_EQ(a.position(), 100u);
  RngStream c(8, 100);
  EXPECT_EQ(sample_normal(a, 1.0, 3), sample_normal(c, 1.0, 3));
}

TEST(SampleNormal, MomentsForMillionDraws) {
  RngStream rng(2024);
  const Vec x = sample_normal(rng, 0.1, 1000000);
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().sum() / static_cast<double>(x.size() - 1));
  EXPECT_LE(std::abs(mean), 5e-4);
  EXPECT_GE(sd, 0.0995);
  EXPECT_LE(sd, 0.1005);
}

TEST(SampleNormal, KolmogorovSmirnovAgainstNormalCdf) {
  constexpr int n = 100000;
  const double critical = 1.9495 / std::sqrt(static_cast<double>(n));  // alpha = 0.001
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(derive_seed(0x5EED, seed));
    Vec x = sample_normal(rng, 1.0, n);
    std::sort(x.data(), x.data() + n);
    double d = 0;
    for (int i = 0; i < n; ++i) {
      const double cdf = 0.5 * std::erfc(-x(i) / std::sqrt(2.0));
      d = std::max({d, cdf - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - cdf});
    }
    EXPECT_LT(d, critical) << "seed " << seed;
  }
}

}  // namespace
}  // namespace moelab
