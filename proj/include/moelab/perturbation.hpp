// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Expert-parameter error model. For a targeted expert with parameters theta
// (n scalars) the bound is e = p * ||theta||_1 / n, and every parameter gets
// an independent N(0, e^2) draw added (e is the standard deviation).

#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "moelab/model.hpp"
#include "moelab/stats.hpp"

namespace moelab {

enum class ErrorDistribution { kNormal };

struct ErrorSpec {
  double percentage = 0;  // p
  ErrorDistribution distribution = ErrorDistribution::kNormal;
  /// Clip every draw to [-e, e], as a hard-bounded compressor would.
  bool clamp_to_bound = false;
  std::uint64_t seed = 0;
};

/// Inclusive layer range.
struct LayerRange {
  int first = 0;
  int last = 0;
  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

namespace target {
struct SingleExpert {
  ExpertId id;
};
struct HighestFrequent {
  int layer = 0;
};
struct TopKFrequent {
  int layer = 0;
  int k = 1;
};
struct AllInLayer {
  int layer = 0;
};
/// One most-activated (layer, expert) pair per range.
struct GroupedHighestFrequent {
  std::vector<LayerRange> ranges;
};
/// Replace the expert with fresh initializer draws instead of adding noise.
struct RandomizeExpert {
  ExpertId id;
};
}  // namespace target

using TargetStrategy =
    std::variant<target::SingleExpert, target::HighestFrequent, target::TopKFrequent,
                 target::AllInLayer, target::GroupedHighestFrequent, target::RandomizeExpert>;

/// Overlapping groups L1-L10, L9-L18, L17-L26 of a 26-layer model (0-based).
std::vector<LayerRange> overlapping_groups_26();

/// Resolves the strategy against activation counts. Frequency ties go to
/// the lower expert index (then the lower layer). The result is sorted and
/// free of duplicates.
std::vector<ExpertId> select_targets(const TargetStrategy& strategy, const ActivationLog& log);

/// p * (sum |theta_i|) / n over both expert matrices.
double compute_error_bound(const ExpertWeights& expert, double p);

struct PerturbationPlan {
  std::vector<ExpertId> targets;
  ErrorSpec spec;
  std::vector<double> bounds;  // per target, same order
};

PerturbationPlan make_plan(std::vector<ExpertId> targets, const MoEModel& model,
                           const ErrorSpec& spec);

/// Returns a perturbed copy. Each target draws from its own stream derived
/// from (spec.seed, layer * E + expert), w_in before w_out in row-major
/// order, so disjoint plans applied in sequence equal their union. Every
/// non-targeted parameter is left bitwise unchanged.
MoEModel inject_errors(const MoEModel& model, const PerturbationPlan& plan);

/// Replaces one expert's parameters with N(0, init_scale^2) draws.
MoEModel randomize_expert(const MoEModel& model, ExpertId id, std::uint64_t seed);

std::string strategy_name(const TargetStrategy& strategy);
nlohmann::ordered_json strategy_params(const TargetStrategy& strategy);
/// Accepts the name/params pair written by strategy_name/strategy_params.
TargetStrategy strategy_from_json(const std::string& name, const nlohmann::ordered_json& params);

/// {strategy, params, p, clamp, seed, targets: [{layer, expert, bound}]}.
nlohmann::ordered_json plan_to_json(const PerturbationPlan& plan, const TargetStrategy& strategy);

}  // namespace moelab
