// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// End-to-end sensitivity experiments: obtain a model, profile it on the clean
// evaluation split, resolve a targeting protocol against that profile, then
// score every (p, seed) perturbation cell.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "moelab/evaluator.hpp"
#include "moelab/offload.hpp"
#include "moelab/perturbation.hpp"
#include "moelab/train.hpp"

namespace moelab {

/// Model config with the desk-scale defaults and the task vocabulary's EOS.
ModelConfig default_model_config();

struct ProtocolConfig {
  /// single-expert, highest-frequent, cross-layer, topk, all-in-layer,
  /// grouped or randomize.
  std::string preset = "all-in-layer";
  /// One arm per layer; empty picks the preset default.
  std::vector<int> layers;
  int expert = 0;  // single-expert / randomize
  int k = 2;       // topk
  std::vector<LayerRange> ranges;  // grouped; empty picks the default grouping

  friend bool operator==(const ProtocolConfig&, const ProtocolConfig&) = default;
};

struct ExperimentConfig {
  std::optional<std::filesystem::path> checkpoint;  // otherwise train
  ModelConfig model = default_model_config();
  TrainConfig train;
  int train_samples = 2000;
  TaskSpec task;
  int eval_samples = 200;
  ProtocolConfig protocol;
  std::vector<double> p_values{0.1, 0.3, 0.5, 0.8};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  bool clamp = false;
  /// Percentage used for the per-expert compression/offload summary.
  double compression_p = 0.1;
  TransferParams transfer;
  std::filesystem::path output_dir = "moelab-out";

  void validate() const;
};

nlohmann::ordered_json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::ordered_json& j);

/// Target strategies, one per arm, for the configured preset.
std::vector<TargetStrategy> protocol_arms(const ProtocolConfig& protocol, int num_layers);

/// 64-bit FNV-1a of the canonical config JSON, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

struct Cell {
  double p = 0;
  std::uint64_t seed = 0;
  double ica = 0;
  double pia = 0;
  bool degenerate = false;
};

struct Arm {
  std::string label;
  TargetStrategy strategy;
  std::vector<ExpertId> targets;
  std::vector<PerturbationPlan> plans;  // one per p (bounds do not depend on the seed)
  std::vector<Cell> cells;              // p-major, then seed
};

struct CompressionRow {
  ExpertId id;
  double error_bound = 0;
  double ratio = 1;
  double max_error = 0;
};

/// Compresses every expert (w_in then w_out) at the bound for percentage p.
std::vector<CompressionRow> compression_rows(const MoEModel& model, double p);

struct TrainSummary {
  int steps_run = 0;
  double final_loss = 0;
  double eval_ica = 0;
  double eval_pia = 0;
  bool reached_target = false;
};

struct Report {
  ExperimentConfig config;
  std::optional<TrainSummary> training;
  double baseline_ica = 0;
  double baseline_pia = 0;
  bool baseline_degenerate = false;
  ActivationLog baseline_log;
  std::vector<Arm> arms;
  std::vector<CompressionRow> compression;
  std::vector<OffloadRow> offload;
};

/// Loads or trains the model described by the config.
MoEModel obtain_model(const ExperimentConfig& config, std::optional<TrainSummary>* training = nullptr);

Report run_experiment(const ExperimentConfig& config);
/// Same pipeline on an already-built model (the config's model source is
/// still echoed into the report).
Report run_experiment(const ExperimentConfig& config, const MoEModel& model);

nlohmann::ordered_json report_json(const Report& report);
/// Header "arm,p,seed,ica,pia,degenerate"; a baseline row, then one row per cell.
std::string summary_csv(const Report& report);

/// Writes report.json, summary.csv, heatmap.csv and compression.csv.
void emit_report(const Report& report, const std::filesystem::path& dir);

}  // namespace moelab
