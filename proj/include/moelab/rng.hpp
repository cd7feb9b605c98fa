// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

#include "moelab/tensor.hpp"

namespace moelab {

/// Counter-based random stream. Draw number `position` is a pure function of
/// (seed, position): raw bits come from the SplitMix64 finalizer applied to
/// seed + (position + 1) * 0x9E3779B97F4A7C15, so streams can be replayed or
/// skipped without state beyond the counter.
class RngStream {
 public:
  static constexpr std::string_view kGeneratorName =
      "splitmix64-counter/box-muller-cos";

  explicit RngStream(std::uint64_t seed, std::uint64_t position = 0)
      : seed_(seed), position_(position) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t position() const noexcept { return position_; }

  std::uint64_t next_u64() noexcept { return bits_at(position_++); }

  /// Uniform in the open interval (0, 1) with 53 bits of resolution.
  double next_uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal; consumes one counter position.
  double next_normal() noexcept;

  /// Uniform integer in [0, bound). Uses rejection to stay unbiased.
  std::uint64_t next_below(std::uint64_t bound) noexcept;

  /// Independent child stream for task `index`.
  RngStream split(std::uint64_t index) const noexcept;

 private:
  std::uint64_t bits_at(std::uint64_t pos) const noexcept;

  std::uint64_t seed_;
  std::uint64_t position_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Derives a reproducible child seed from a parent seed and a stream label.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept;

/// n independent draws from N(0, sigma^2), i.e. sigma is the standard deviation.
/// Advances `rng` by exactly n logical (normal) draws.
Vec sample_normal(RngStream& rng, double sigma, Eigen::Index n);

}  // namespace moelab
