// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moelab/perturbation.hpp"

#include <algorithm>
#include <cmath>

#include "moelab/rng.hpp"

namespace moelab {

namespace {

void check_layer(int layer, const ActivationLog& log) {
  if (layer < 0 || layer >= log.num_layers())
    throw ConfigError("layer " + std::to_string(layer) + " out of range [0, " +
                      std::to_string(log.num_layers()) + ")");
}

void check_id(ExpertId id, const ActivationLog& log) {
  check_layer(id.layer, log);
  if (id.expert < 0 || id.expert >= log.num_experts())
    throw ConfigError("expert " + std::to_string(id.expert) + " out of range");
}

void require_counts(const ActivationLog& log, int layer) {
  if (log.counts().row(layer).sum() == 0)
    throw ProtocolError("no recorded activations for layer " + std::to_string(layer));
}

// Experts of `layer` ordered by descending count, ties to the lower index.
std::vector<int> ranked_experts(const ActivationLog& log, int layer) {
  std::vector<int> order(static_cast<std::size_t>(log.num_experts()));
  for (int e = 0; e < log.num_experts(); ++e) order[static_cast<std::size_t>(e)] = e;
  const auto row = log.counts().row(layer);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return row(a) > row(b); });
  return order;
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

ExpertId id_from_json(const nlohmann::ordered_json& j) {
  return {j.at("layer").get<int>(), j.at("expert").get<int>()};
}

}  // namespace

std::vector<LayerRange> overlapping_groups_26() { return {{0, 9}, {8, 17}, {16, 25}}; }

std::vector<ExpertId> select_targets(const TargetStrategy& strategy, const ActivationLog& log) {
  std::vector<ExpertId> out = std::visit(
      overloaded{
          [&](const target::SingleExpert& s) -> std::vector<ExpertId> {
            check_id(s.id, log);
            return {s.id};
          },
          [&](const target::RandomizeExpert& s) -> std::vector<ExpertId> {
            check_id(s.id, log);
            return {s.id};
          },
          [&](const target::HighestFrequent& s) -> std::vector<ExpertId> {
            check_layer(s.layer, log);
            require_counts(log, s.layer);
            return {{s.layer, ranked_experts(log, s.layer).front()}};
          },
          [&](const target::TopKFrequent& s) -> std::vector<ExpertId> {
            check_layer(s.layer, log);
            if (s.k < 1 || s.k > log.num_experts())
              throw ConfigError("TopKFrequent: k must lie in [1, E]");
            require_counts(log, s.layer);
            const auto ranked = ranked_experts(log, s.layer);
            std::vector<ExpertId> ids;
            for (int i = 0; i < s.k; ++i) ids.push_back({s.layer, ranked[static_cast<std::size_t>(i)]});
            return ids;
          },
          [&](const target::AllInLayer& s) -> std::vector<ExpertId> {
            check_layer(s.layer, log);
            std::vector<ExpertId> ids;
            for (int e = 0; e < log.num_experts(); ++e) ids.push_back({s.layer, e});
            return ids;
          },
          [&](const target::GroupedHighestFrequent& s) -> std::vector<ExpertId> {
            if (s.ranges.empty()) throw ConfigError("GroupedHighestFrequent: no ranges");
            std::vector<ExpertId> ids;
            for (const LayerRange& r : s.ranges) {
              check_layer(r.first, log);
              check_layer(r.last, log);
              if (r.first > r.last) throw ConfigError("GroupedHighestFrequent: empty range");
              ExpertId best{-1, -1};
              std::int64_t best_count = 0;
              for (int l = r.first; l <= r.last; ++l)
                for (int e = 0; e < log.num_experts(); ++e)
                  if (log.counts()(l, e) > best_count) {
                    best_count = log.counts()(l, e);
                    best = {l, e};
                  }
              if (best.layer < 0)
                throw ProtocolError("no recorded activations in layers " + std::to_string(r.first) +
                                    "-" + std::to_string(r.last));
              ids.push_back(best);
            }
            return ids;
          },
      },
      strategy);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double compute_error_bound(const ExpertWeights& expert, double p) {
  if (!(p >= 0)) throw DomainError("compute_error_bound: p must be >= 0");
  const Eigen::Index n = expert.param_count();
  if (n == 0) throw DomainError("compute_error_bound: expert has no parameters");
  double l1 = 0;
  for (const Tensor* t : {&expert.w_in, &expert.w_out})
    for (Eigen::Index i = 0; i < t->size(); ++i) l1 += std::abs(t->data()[i]);
  return p * (l1 / static_cast<double>(n));
}

PerturbationPlan make_plan(std::vector<ExpertId> targets, const MoEModel& model,
                           const ErrorSpec& spec) {
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  PerturbationPlan plan{std::move(targets), spec, {}};
  for (ExpertId id : plan.targets)
    plan.bounds.push_back(compute_error_bound(model.expert(id), spec.percentage));
  return plan;
}

MoEModel inject_errors(const MoEModel& model, const PerturbationPlan& plan) {
  if (plan.bounds.size() != plan.targets.size())
    throw InputError("inject_errors: plan has " + std::to_string(plan.bounds.size()) +
                     " bounds for " + std::to_string(plan.targets.size()) + " targets");
  MoEModel out = model;
  const int num_experts = model.config.num_experts;
  for (std::size_t i = 0; i < plan.targets.size(); ++i) {
    const ExpertId id = plan.targets[i];
    const double bound = plan.bounds[i];
    ExpertWeights& w = out.expert(id);
    if (bound == 0.0) continue;
    RngStream rng(derive_seed(plan.spec.seed,
                              static_cast<std::uint64_t>(id.layer) * num_experts + id.expert));
    for (Tensor* t : {&w.w_in, &w.w_out}) {
      for (Eigen::Index j = 0; j < t->size(); ++j) {
        double delta = bound * rng.next_normal();
        double& x = t->data()[j];
        if (!plan.spec.clamp_to_bound) {
          x += delta;
          continue;
        }
        delta = std::clamp(delta, -bound, bound);
        double y = x + delta;
        // Rounding of x + delta can overshoot the bound by an ulp.
        while (std::abs(y - x) > bound) y = std::nextafter(y, x);
        x = y;
      }
    }
  }
  return out;
}

MoEModel randomize_expert(const MoEModel& model, ExpertId id, std::uint64_t seed) {
  MoEModel out = model;
  ExpertWeights& w = out.expert(id);
  RngStream rng(seed);
  for (Tensor* t : {&w.w_in, &w.w_out})
    for (Eigen::Index j = 0; j < t->size(); ++j)
      t->data()[j] = model.config.init_scale * rng.next_normal();
  return out;
}

std::string strategy_name(const TargetStrategy& strategy) {
  return std::visit(overloaded{
                        [](const target::SingleExpert&) { return std::string("single-expert"); },
                        [](const target::HighestFrequent&) { return std::string("highest-frequent"); },
                        [](const target::TopKFrequent&) { return std::string("topk"); },
                        [](const target::AllInLayer&) { return std::string("all-in-layer"); },
                        [](const target::GroupedHighestFrequent&) { return std::string("grouped"); },
                        [](const target::RandomizeExpert&) { return std::string("randomize"); },
                    },
                    strategy);
}

nlohmann::ordered_json strategy_params(const TargetStrategy& strategy) {
  using J = nlohmann::ordered_json;
  return std::visit(
      overloaded{
          [](const target::SingleExpert& s) { return J{{"layer", s.id.layer}, {"expert", s.id.expert}}; },
          [](const target::RandomizeExpert& s) { return J{{"layer", s.id.layer}, {"expert", s.id.expert}}; },
          [](const target::HighestFrequent& s) { return J{{"layer", s.layer}}; },
          [](const target::TopKFrequent& s) { return J{{"layer", s.layer}, {"k", s.k}}; },
          [](const target::AllInLayer& s) { return J{{"layer", s.layer}}; },
          [](const target::GroupedHighestFrequent& s) {
            J ranges = J::array();
            for (const auto& r : s.ranges) ranges.push_back(J::array({r.first, r.last}));
            return J{{"ranges", ranges}};
          },
      },
      strategy);
}

TargetStrategy strategy_from_json(const std::string& name, const nlohmann::ordered_json& params) {
  try {
    if (name == "single-expert") return target::SingleExpert{id_from_json(params)};
    if (name == "randomize") return target::RandomizeExpert{id_from_json(params)};
    if (name == "highest-frequent") return target::HighestFrequent{params.at("layer").get<int>()};
    if (name == "topk") return target::TopKFrequent{params.at("layer").get<int>(), params.at("k").get<int>()};
    if (name == "all-in-layer") return target::AllInLayer{params.at("layer").get<int>()};
    if (name == "grouped") {
      target::GroupedHighestFrequent g;
      for (const auto& r : params.at("ranges")) g.ranges.push_back({r.at(0).get<int>(), r.at(1).get<int>()});
      return g;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("strategy \"" + name + "\": " + e.what());
  }
  throw ConfigError("unknown target strategy \"" + name + "\"");
}

nlohmann::ordered_json plan_to_json(const PerturbationPlan& plan, const TargetStrategy& strategy) {
  nlohmann::ordered_json targets = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < plan.targets.size(); ++i)
    targets.push_back({{"layer", plan.targets[i].layer},
                       {"expert", plan.targets[i].expert},
                       {"bound", plan.bounds[i]}});
  return {{"strategy", strategy_name(strategy)},
          {"params", strategy_params(strategy)},
          {"p", plan.spec.percentage},
          {"clamp", plan.spec.clamp_to_bound},
          {"seed", plan.spec.seed},
          {"targets", targets}};
}

}  // namespace moelab
