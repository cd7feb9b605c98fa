// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// First-order cost model for fetching offloaded experts over the host link.

#pragma once

#include <string>
#include <vector>

#include "moelab/model.hpp"

namespace moelab {

struct TransferParams {
  double pcie_bandwidth = 32e9;       // bytes/s, PCIe 4.0 x16
  double gpu_mem_bandwidth = 300e9;   // bytes/s
  double decompress_throughput = 100e9;  // bytes/s of decompressed output
  bool overlap = false;

  void validate() const;
};

double transfer_time(double bytes, double bandwidth);

/// Time to bring `raw_bytes` of expert weights across the link when they are
/// shipped at `ratio` and expanded on arrival. With overlap the transfer and
/// decompression pipelines hide each other.
double fetch_latency(double raw_bytes, double ratio, const TransferParams& params);

/// Decompression throughput at which a compressed fetch costs as much as a
/// raw one; +inf when compression cannot win (ratio <= 1).
double break_even_throughput(double ratio, const TransferParams& params);

struct OffloadRow {
  std::string label;  // "L<layer>E<expert>" or "L<layer>" for layer totals
  double raw_bytes = 0;
  double ratio = 1;
  double t_uncompressed = 0;
  double t_compressed = 0;
  double speedup = 1;
  double break_even = 0;
};

struct ExpertRatio {
  ExpertId id;
  double ratio = 1;
};

/// Per-expert rows followed by one total row per layer. An expert whose
/// ratio is at most 1 is shipped raw, so it pays no decompression cost.
std::vector<OffloadRow> speedup_report(const ModelConfig& config,
                                       const std::vector<ExpertRatio>& ratios,
                                       const TransferParams& params);

/// CSV "expert,raw_bytes,ratio,t_uncompressed,t_compressed,speedup".
std::string offload_csv(const std::vector<OffloadRow>& rows);

}  // namespace moelab
