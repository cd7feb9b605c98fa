// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moelab/rng.hpp"

#include <cmath>
#include <numbers>

namespace moelab {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(parent) ^ (index * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
}

std::uint64_t RngStream::bits_at(std::uint64_t pos) const noexcept {
  return splitmix64(seed_ + pos * 0x9E3779B97F4A7C15ull);
}

double RngStream::next_normal() noexcept {
  // One counter position per normal: the second uniform is re-mixed from the
  // first position's bits.
  const std::uint64_t a = next_u64();
  const std::uint64_t b = splitmix64(a ^ 0x6A09E667F3BCC909ull);
  const double u1 = (static_cast<double>(a >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = (static_cast<double>(b >> 11) + 0.5) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::next_below(std::uint64_t bound) noexcept {
  if (bound <= 1) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r < limit) return r % bound;
  }
}

RngStream RngStream::split(std::uint64_t index) const noexcept {
  return RngStream(derive_seed(seed_, index));
}

Vec sample_normal(RngStream& rng, double sigma, Eigen::Index n) {
  if (!(sigma >= 0.0)) throw DomainError("sample_normal: sigma must be >= 0");
  Vec out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = sigma * rng.next_normal();
  return out;
}

}  // namespace moelab
