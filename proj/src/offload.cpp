// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moelab/offload.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "moelab/format.hpp"

namespace moelab {

void TransferParams::validate() const {
  for (double r : {pcie_bandwidth, gpu_mem_bandwidth, decompress_throughput})
    if (!(r > 0)) throw DomainError("TransferParams: all rates must be > 0");
}

double transfer_time(double bytes, double bandwidth) {
  if (!(bandwidth > 0)) throw DomainError("transfer_time: bandwidth must be > 0");
  if (bytes < 0) throw DomainError("transfer_time: negative byte count");
  return bytes / bandwidth;
}

double fetch_latency(double raw_bytes, double ratio, const TransferParams& params) {
  if (!(ratio >= 1)) throw DomainError("fetch_latency: ratio must be >= 1");
  params.validate();
  const double transfer = transfer_time(raw_bytes / ratio, params.pcie_bandwidth);
  const double decomp = transfer_time(raw_bytes, params.decompress_throughput);
  return params.overlap ? std::max(transfer, decomp) : transfer + decomp;
}

double break_even_throughput(double ratio, const TransferParams& params) {
  if (!(ratio > 1)) return std::numeric_limits<double>::infinity();
  if (params.overlap) return params.pcie_bandwidth;
  return params.pcie_bandwidth * ratio / (ratio - 1.0);
}

std::vector<OffloadRow> speedup_report(const ModelConfig& config,
                                       const std::vector<ExpertRatio>& ratios,
                                       const TransferParams& params) {
  params.validate();
  const double raw = static_cast<double>(2 * config.d_model * config.d_ff) * sizeof(double);
  std::vector<OffloadRow> rows;
  std::vector<OffloadRow> layers(static_cast<std::size_t>(config.num_layers));
  for (int l = 0; l < config.num_layers; ++l) layers[static_cast<std::size_t>(l)].label = "L" + std::to_string(l);
  for (const ExpertRatio& er : ratios) {
    if (er.id.layer < 0 || er.id.layer >= config.num_layers || er.id.expert < 0 ||
        er.id.expert >= config.num_experts)
      throw DomainError("speedup_report: expert " + to_string(er.id) + " out of range");
    OffloadRow r;
    r.label = "L" + std::to_string(er.id.layer) + "E" + std::to_string(er.id.expert);
    r.raw_bytes = raw;
    r.ratio = er.ratio;
    r.t_uncompressed = transfer_time(raw, params.pcie_bandwidth);
    r.t_compressed = er.ratio <= 1.0 ? r.t_uncompressed : fetch_latency(raw, er.ratio, params);
    r.speedup = r.t_uncompressed / r.t_compressed;
    r.break_even = break_even_throughput(er.ratio, params);
    OffloadRow& lt = layers[static_cast<std::size_t>(er.id.layer)];
    lt.raw_bytes += raw;
    lt.t_uncompressed += r.t_uncompressed;
    lt.t_compressed += r.t_compressed;
    rows.push_back(std::move(r));
  }
  for (OffloadRow& lt : layers) {
    if (lt.raw_bytes == 0) continue;
    // Effective layer ratio: raw bytes over bytes on the wire.
    double wire = 0;
    for (const OffloadRow& r : rows)
      if (r.label.rfind(lt.label + "E", 0) == 0) wire += r.raw_bytes / std::max(r.ratio, 1.0);
    lt.ratio = lt.raw_bytes / wire;
    lt.speedup = lt.t_uncompressed / lt.t_compressed;
    lt.break_even = break_even_throughput(lt.ratio, params);
    rows.push_back(lt);
  }
  return rows;
}

std::string offload_csv(const std::vector<OffloadRow>& rows) {
  std::string s = "expert,raw_bytes,ratio,t_uncompressed,t_compressed,speedup\n";
  for (const OffloadRow& r : rows)
    s += r.label + ',' + format_double(r.raw_bytes) + ',' + format_double(r.ratio) + ',' +
         format_double(r.t_uncompressed) + ',' + format_double(r.t_compressed) + ',' +
         format_double(r.speedup) + '\n';
  return s;
}

}  // namespace moelab
