// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "moelab/experiment.hpp"
#include "moelab/offload.hpp"
#include "moelab/rng.hpp"

namespace moelab {
namespace {

TEST(TransferTime, Examples) {
  EXPECT_EQ(transfer_time(0, 32e9), 0.0);
  EXPECT_NEAR(transfer_time(66.6e9, 32e9), 2.08125, 2.08125 * 1e-9);
  EXPECT_EQ(transfer_time(32e9, 32e9), 1.0);
  EXPECT_THROW(transfer_time(1, 0), DomainError);
  EXPECT_THROW(transfer_time(1, -5), DomainError);
}

TEST(TransferTime, Linearity) {
  RngStream rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double a = static_cast<double>(rng.next_below(1ull << 40));
    const double b = static_cast<double>(rng.next_below(1ull << 40));
    const double bw = std::ldexp(1.0, 30 + static_cast<int>(rng.next_below(8)));
    EXPECT_EQ(transfer_time(a + b, bw), transfer_time(a, bw) + transfer_time(b, bw));
    EXPECT_NEAR(transfer_time(a + b, 32e9), transfer_time(a, 32e9) + transfer_time(b, 32e9),
                4 * std::numeric_limits<double>::epsilon() * transfer_time(a + b, 32e9));
  }
}

TransferParams example_params(bool overlap) {
  TransferParams p;
  p.pcie_bandwidth = 32e9;
  p.decompress_throughput = 64e9;
  p.overlap = overlap;
  return p;
}

TEST(FetchLatency, Examples) {
  EXPECT_DOUBLE_EQ(fetch_latency(64e9, 4, example_params(true)), 1.0);
  EXPECT_DOUBLE_EQ(fetch_latency(64e9, 4, example_params(false)), 1.5);
  TransferParams fast = example_params(false);
  fast.decompress_throughput = 1e18;
  EXPECT_NEAR(fetch_latency(48e9, 1, fast), transfer_time(48e9, 32e9), 1e-7);
  EXPECT_THROW(fetch_latency(1, 0.99, fast), DomainError);
  fast.pcie_bandwidth = 0;
  EXPECT_THROW(fetch_latency(1, 2, fast), DomainError);
}

TEST(FetchLatency, MonotoneSweep) {
  for (bool overlap : {false, true}) {
    for (double raw : {1e6, 6.4e10}) {
      double last = std::numeric_limits<double>::infinity();
      for (double r = 1; r <= 64; r *= 1.25) {
        const double t = fetch_latency(raw, r, example_params(overlap));
        EXPECT_LE(t, last);
        last = t;
      }
      for (double TransferParams::*rate : {&TransferParams::pcie_bandwidth, &TransferParams::decompress_throughput}) {
        TransferParams p = example_params(overlap);
        last = std::numeric_limits<double>::infinity();
        for (double bw = 1e9; bw <= 1e12; bw *= 2) {
          p.*rate = bw;
          const double t = fetch_latency(raw, 3, p);
          EXPECT_LE(t, last);
          last = t;
        }
      }
    }
  }
}

TEST(FetchLatency, OverlapNeverSlower) {
  RngStream rng(8);
  for (int i = 0; i < 500; ++i) {
    TransferParams p;
    p.pcie_bandwidth = 1e8 + rng.next_uniform() * 1e11;
    p.decompress_throughput = 1e8 + rng.next_uniform() * 1e11;
    const double raw = rng.next_uniform() * 1e10, r = 1 + rng.next_uniform() * 20;
    p.overlap = true;
    const double with = fetch_latency(raw, r, p);
    p.overlap = false;
    EXPECT_LE(with, fetch_latency(raw, r, p));
  }
}

TEST(BreakEven, MatchesEqualCost) {
  TransferParams p = example_params(false);
  p.decompress_throughput = break_even_throughput(4, p);
  EXPECT_NEAR(fetch_latency(1e9, 4, p), transfer_time(1e9, p.pcie_bandwidth), 1e-12);
  EXPECT_EQ(break_even_throughput(1, p), std::numeric_limits<double>::infinity());
}

ModelConfig toy() {
  ModelConfig c = default_model_config();
  c.num_layers = 2;
  c.num_experts = 3;
  return c;
}

std::vector<ExpertRatio> uniform_ratios(const ModelConfig& c, double r) {
  std::vector<ExpertRatio> v;
  for (int l = 0; l < c.num_layers; ++l)
    for (int e = 0; e < c.num_experts; ++e) v.push_back({{l, e}, r});
  return v;
}

TEST(SpeedupReport, UnitRatiosGiveUnitSpeedup) {
  const auto rows = speedup_report(toy(), uniform_ratios(toy(), 1.0), TransferParams{});
  EXPECT_EQ(rows.size(), 8u);
  for (const auto& r : rows) EXPECT_EQ(r.speedup, 1.0) << r.label;
  EXPECT_EQ(rows.back().label, "L1");
  EXPECT_EQ(rows.back().raw_bytes, 3.0 * 2 * 32 * 64 * 8);
}

TEST(SpeedupReport, DoublingRatiosHalvesTransfer) {
  TransferParams p;
  p.decompress_throughput = std::numeric_limits<double>::max();
  const auto a = speedup_report(toy(), uniform_ratios(toy(), 2.5), p);
  const auto b = speedup_report(toy(), uniform_ratios(toy(), 5.0), p);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i].t_compressed, a[i].t_compressed / 2, 1e-18);
}

TEST(SpeedupReport, IncompressibleExpertShippedRaw) {
  std::vector<ExpertRatio> r = uniform_ratios(toy(), 2.0);
  r[0].ratio = 0.7;
  const auto rows = speedup_report(toy(), r, TransferParams{});
  EXPECT_EQ(rows[0].t_compressed, rows[0].t_uncompressed);
  EXPECT_EQ(rows[0].break_even, std::numeric_limits<double>::infinity());
  EXPECT_THROW(speedup_report(toy(), {{{2, 0}, 2.0}}, TransferParams{}), DomainError);
}

TEST(SpeedupReport, TransferTimeFallsAsBoundGrows) {
  const MoEModel m = MoEModel::initialize(toy(), 3);
  TransferParams p;
  p.decompress_throughput = 1e15;
  std::vector<double> last(2, std::numeric_limits<double>::infinity());
  for (double pct : {0.01, 0.05, 0.1, 0.3, 0.5, 0.8}) {
    std::vector<ExpertRatio> ratios;
    for (const auto& row : compression_rows(m, pct)) {
      EXPECT_LE(row.max_error, row.error_bound);
      ratios.push_back({row.id, row.ratio});
    }
    const auto rows = speedup_report(m.config, ratios, p);
    for (int l = 0; l < 2; ++l) {
      const double t = rows[rows.size() - 2 + static_cast<std::size_t>(l)].t_compressed;
      EXPECT_LE(t, last[static_cast<std::size_t>(l)]) << pct;
      last[static_cast<std::size_t>(l)] = t;
    }
  }
}

TEST(SpeedupReport, CsvLayout) {
  const auto csv = offload_csv(speedup_report(toy(), uniform_ratios(toy(), 1.0), TransferParams{}));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "expert,raw_bytes,ratio,t_uncompressed,t_compressed,speedup");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  EXPECT_NE(csv.find("\nL0E0,32768,1,"), std::string::npos);
}

}  // namespace
}  // namespace moelab
