// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "moelab/compressor.hpp"
#include "moelab/rng.hpp"

namespace moelab {
namespace {

double max_abs_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

std::vector<double> round_trip(const std::vector<double>& x, double eb) {
  return decompress_eb(parse_compressed(serialize(compress_eb(x, eb))));
}

std::vector<double> fuzz_tensor(RngStream& rng) {
  const std::size_t n = 1 + rng.next_below(3000);
  const double scale = std::pow(10.0, -6.0 + 12.0 * rng.next_uniform());
  std::vector<double> x(n);
  switch (rng.next_below(4)) {
    case 0:
      for (auto& v : x) v = scale * rng.next_normal();
      break;
    case 1:
      for (auto& v : x) v = std::numeric_limits<double>::denorm_min() * static_cast<double>(rng.next_below(1000));
      break;
    case 2: {
      double walk = 0;
      for (auto& v : x) v = walk += scale * 1e-3 * rng.next_normal();
      break;
    }
    default:
      for (auto& v : x) v = rng.next_below(10) == 0 ? scale * rng.next_normal() * 1e3 : 0.0;
  }
  return x;
}

TEST(Codec, HardBoundOnFuzzedInputs) {
  RngStream rng(2026);
  for (int trial = 0; trial < 400; ++trial) {
    const auto x = fuzz_tensor(rng);
    const double eb = std::pow(10.0, -6.0 + 5.0 * rng.next_uniform());
    const auto y = round_trip(x, eb);
    ASSERT_EQ(y.size(), x.size());
    ASSERT_LE(max_abs_error(x, y), eb) << "trial " << trial;
  }
}

TEST(Codec, ExtremeMagnitudesRespectBound) {
  std::vector<double> x{1e300, -1e300, 0.0, 1e-300, std::numeric_limits<double>::max(),
                        -std::numeric_limits<double>::max(), std::numeric_limits<double>::denorm_min()};
  for (double eb : {1e-6, 1.0, 1e290}) EXPECT_LE(max_abs_error(x, round_trip(x, eb)), eb);
}

TEST(Codec, SingleElement) {
  EXPECT_LE(max_abs_error({3.25}, round_trip({3.25}, 1e-3)), 1e-3);
  EXPECT_TRUE(round_trip({}, 1e-3).empty());
}

TEST(Codec, ConstantTensorCompressesHard) {
  const std::vector<double> x(100000, 0.731);
  const CompressedBlock b = compress_eb(x, 1e-4);
  EXPECT_GT(ratio(b, x), 100.0);
  EXPECT_LE(max_abs_error(x, decompress_eb(b)), 1e-4);
}

TEST(Codec, SecondRoundTripIsBitwiseIdentical) {
  RngStream rng(5);
  std::vector<double> x(5000);
  for (auto& v : x) v = rng.next_normal() * (rng.next_below(100) == 0 ? 1e5 : 1.0);
  for (double eb : {1e-6, 1e-2, 0.3}) {
    const auto once = round_trip(x, eb);
    const auto twice = round_trip(once, eb);
    EXPECT_EQ(std::memcmp(once.data(), twice.data(), once.size() * sizeof(double)), 0) << eb;
    EXPECT_EQ(serialize(compress_eb(x, eb)), serialize(compress_eb(x, eb)));
  }
}

TEST(Codec, SerializeParseRoundTrip) {
  RngStream rng(6);
  std::vector<double> x(777);
  for (auto& v : x) v = rng.next_normal() * (rng.next_below(50) == 0 ? 1e9 : 1.0);
  const CompressedBlock b = compress_eb(x, 1e-3);
  EXPECT_FALSE(b.outlier_index.empty());
  const Bytes bytes = serialize(b);
  EXPECT_EQ(parse_compressed(bytes), b);
  EXPECT_EQ(serialize(parse_compressed(bytes)), bytes);
}

TEST(Codec, HeaderLayout) {
  const Bytes bytes = serialize(compress_eb(std::vector<double>{1.0, 2.0, 3.0}, 0.5));
  ASSERT_GE(bytes.size(), 22u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MELC");
  EXPECT_EQ(bytes[4], kMelcVersion);
  std::uint64_t count = 0;
  double eb = 0;
  std::memcpy(&count, bytes.data() + 5, 8);
  std::memcpy(&eb, bytes.data() + 13, 8);
  EXPECT_EQ(count, 3u);
  EXPECT_EQ(eb, 0.5);
  EXPECT_EQ(bytes[21], kPredictorLorenzo1);
}

TEST(Codec, CorruptionIsReported) {
  const Bytes good = serialize(compress_eb(std::vector<double>{1.0, 2.0, 3.0, 4.0}, 0.1));
  Bytes bad = good;
  bad[0] = 'X';
  EXPECT_THROW(parse_compressed(bad), FormatError);
  bad = good;
  bad[4] = 9;
  EXPECT_THROW(parse_compressed(bad), FormatError);
  EXPECT_THROW(parse_compressed(std::span(good).first(good.size() - 1)), FormatError);
  bad = good;
  bad.push_back(0);
  EXPECT_THROW(parse_compressed(bad), FormatError);
  try {
    Bytes m = good;
    m[1] = 'Z';
    parse_compressed(m);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(Codec, InvalidArguments) {
  EXPECT_THROW(compress_eb(std::vector<double>{1.0}, 0.0), DomainError);
  EXPECT_THROW(compress_eb(std::vector<double>{1.0}, -1.0), DomainError);
  EXPECT_THROW(compress_eb(std::vector<double>{1.0}, std::nan("")), DomainError);
  EXPECT_THROW(compress_eb(std::vector<double>{1.0, std::nan("")}, 0.1), InputError);
  EXPECT_THROW(compress_eb(std::vector<double>{std::numeric_limits<double>::infinity()}, 0.1), InputError);
}

TEST(Codec, RatioMonotoneInBoundOnSmoothData) {
  std::vector<double> x(20000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(static_cast<double>(i) * 1e-3);
  double last = 0;
  for (double eb : {1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2}) {
    const double r = ratio(compress_eb(x, eb), x);
    EXPECT_GE(r, last) << eb;
    last = r;
  }
}

TEST(Codec, IncompressibleInputReportedHonestly) {
  RngStream rng(12);
  std::vector<double> x(4096);
  for (auto& v : x) v = rng.next_normal() * 1e6;
  const CompressedBlock b = compress_eb(x, 1e-12);
  const double r = ratio(b, x);
  EXPECT_LT(r, 1.0);
  EXPECT_EQ(r, 8.0 * static_cast<double>(x.size()) / static_cast<double>(serialize(b).size()));
  EXPECT_LE(max_abs_error(x, decompress_eb(b)), 1e-12);
}

TEST(Quantizer, ConstantTensorIsExact) {
  const std::vector<double> x(50, -2.5);
  for (int bits : {2, 3, 4, 8}) EXPECT_EQ(dequantize_uniform(quantize_uniform(x, bits)), x);
}

TEST(Quantizer, EndpointsMapToExtremeCodes) {
  const QuantizedBlock q = quantize_uniform(std::vector<double>{0.0, 1.0}, 8);
  EXPECT_EQ(quantized_codes(q), (std::vector<std::uint32_t>{0, 255}));
  EXPECT_EQ(dequantize_uniform(q), (std::vector<double>{0.0, 1.0}));
}

TEST(Quantizer, ErrorWithinHalfStep) {
  RngStream rng(3);
  std::vector<double> x(1000);
  for (auto& v : x) v = rng.next_uniform();
  x[0] = 0;
  x[1] = 1;
  EXPECT_LE(max_abs_error(x, dequantize_uniform(quantize_uniform(x, 4))), 1.0 / 15 + 1e-12);
  for (int bits : {2, 3, 8}) {
    const double step = 1.0 / ((1 << bits) - 1);
    EXPECT_LE(max_abs_error(x, dequantize_uniform(quantize_uniform(x, bits))), step / 2 + 1e-12);
  }
}

TEST(Quantizer, RejectsBadBitWidth) {
  for (int bits : {0, 1, 5, 16}) EXPECT_THROW(quantize_uniform(std::vector<double>{1.0}, bits), DomainError);
}

TEST(Quantizer, HeavyTailDefeatsQuantizerButNotCodec) {
  // Cauchy weights with scale 0.01.
  RngStream rng(99);
  std::vector<double> x(20000);
  for (auto& v : x) v = 0.01 * std::tan(M_PI * (rng.next_uniform() - 0.5));
  const QuantizedBlock q = quantize_uniform(x, 4);
  const double quant_err = max_abs_error(x, dequantize_uniform(q));
  const double eb = 0.02;
  const CompressedBlock c = compress_eb(x, eb);
  EXPECT_GE(ratio(c, x), ratio(q, x));
  EXPECT_GT(quant_err, eb);
  EXPECT_LE(max_abs_error(x, decompress_eb(c)), eb);
}

TEST(Quantizer, SerializedSize) {
  const QuantizedBlock q = quantize_uniform(std::vector<double>(10, 1.0), 4);
  EXPECT_EQ(serialize(q).size(), 4u + 1 + 8 + 8 + 8 + 5);
  EXPECT_EQ(ratio(q, std::vector<double>(10, 1.0)), 80.0 / 34.0);
}

}  // namespace
}  // namespace moelab
