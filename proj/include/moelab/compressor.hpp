// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Error-bounded lossy codec for parameter streams.
//
// Each value is predicted by the previous *reconstructed* value (0 for the
// first), the residual is quantized into bins of width 2e, and the bin
// indices are prefix coded. A value whose bin index falls outside +-32767,
// or whose reconstruction would miss the bound after rounding, is stored
// raw. Runs of zero bins are coded as binary run-length symbols.
//
// .melc layout (little-endian):
//   header  "MELC" | u8 version | u64 element count | f64 error bound |
//           u8 predictor id
//   table   u32 symbol count K | K x (u32 symbol, u8 code length)
//   stream  u64 bit count | ceil(bits/8) bytes, codes written MSB first
//   outliers u64 count M | M x u64 index | M x f64 value
//
// Symbols: 0..65534 are bin index + 32767, 65535 is the outlier escape,
// 65536 + k stands for 2^k consecutive zero bins.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moelab/format.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

inline constexpr std::uint8_t kMelcVersion = 1;
inline constexpr std::uint8_t kPredictorLorenzo1 = 1;
inline constexpr int kMaxBinIndex = 32767;

struct CodeEntry {
  std::uint32_t symbol = 0;
  std::uint8_t length = 0;
  friend bool operator==(const CodeEntry&, const CodeEntry&) = default;
};

struct CompressedBlock {
  std::uint64_t count = 0;
  double error_bound = 0;
  std::uint8_t predictor = kPredictorLorenzo1;
  std::vector<CodeEntry> table;
  std::uint64_t bit_count = 0;
  Bytes stream;
  std::vector<std::uint64_t> outlier_index;
  std::vector<double> outlier_value;

  friend bool operator==(const CompressedBlock&, const CompressedBlock&) = default;
};

CompressedBlock compress_eb(std::span<const double> x, double error_bound);
std::vector<double> decompress_eb(const CompressedBlock& block);

Bytes serialize(const CompressedBlock& block);
CompressedBlock parse_compressed(std::span<const std::uint8_t> bytes);

/// Affine min-max quantization to 2, 3, 4 or 8 bits.
struct QuantizedBlock {
  int bits = 4;
  std::uint64_t count = 0;
  double min = 0;
  double max = 0;
  Bytes packed;  // codes packed LSB first
};

QuantizedBlock quantize_uniform(std::span<const double> x, int bits);
std::vector<double> dequantize_uniform(const QuantizedBlock& block);
/// "MEUQ" | u8 bits | u64 count | f64 min | f64 max | packed codes.
Bytes serialize(const QuantizedBlock& block);
/// Unpacked integer codes, mainly for inspection.
std::vector<std::uint32_t> quantized_codes(const QuantizedBlock& block);

/// Original size at 8 bytes per value over the serialized block size.
double ratio(const CompressedBlock& block, std::span<const double> original);
double ratio(const QuantizedBlock& block, std::span<const double> original);

inline std::span<const double> values(const Tensor& t) {
  return {t.data(), static_cast<std::size_t>(t.size())};
}

}  // namespace moelab
