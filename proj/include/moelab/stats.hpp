// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

using CountMatrix = MatrixX<std::int64_t>;

/// Per-(layer, expert) activation counts and summed routing weights over a
/// corpus. Counts grow by one for every token routed to an expert; weights
/// are the post-renormalization gate values.
class ActivationLog {
 public:
  ActivationLog() = default;
  ActivationLog(int num_layers, int num_experts);

  int num_layers() const noexcept { return static_cast<int>(counts_.rows()); }
  int num_experts() const noexcept { return static_cast<int>(counts_.cols()); }

  void record(int layer, int expert, double weight);
  void add_tokens(std::int64_t n) { tokens_ += n; }

  const CountMatrix& counts() const noexcept { return counts_; }
  const Tensor& weight_sums() const noexcept { return weights_; }
  std::int64_t tokens_processed() const noexcept { return tokens_; }

  /// True when no token has been recorded in any layer.
  bool empty() const noexcept { return tokens_ == 0 && counts_.sum() == 0; }

  friend ActivationLog merge(const ActivationLog& a, const ActivationLog& b);

  friend bool operator==(const ActivationLog& a, const ActivationLog& b) {
    return a.counts_ == b.counts_ && a.weights_ == b.weights_ && a.tokens_ == b.tokens_;
  }

 private:
  CountMatrix counts_;
  Tensor weights_;
  std::int64_t tokens_ = 0;
};

/// Elementwise sum of two logs of identical shape.
ActivationLog merge(const ActivationLog& a, const ActivationLog& b);

namespace detail {

template <typename Derived>
double checked_total(const Eigen::DenseBase<Derived>& counts, const char* what) {
  double total = 0;
  for (Eigen::Index i = 0; i < counts.size(); ++i) total += static_cast<double>(counts(i));
  if (!(total > 0)) throw DomainError(std::string(what) + ": counts sum to zero");
  return total;
}

}  // namespace detail

/// Fraction of experts activated at least once.
template <typename Derived>
double expert_utilization(const Eigen::DenseBase<Derived>& counts) {
  if (counts.size() == 0) throw DomainError("expert_utilization: no experts");
  Eigen::Index used = 0;
  for (Eigen::Index i = 0; i < counts.size(); ++i)
    if (counts(i) > 0) ++used;
  return static_cast<double>(used) / static_cast<double>(counts.size());
}

/// Shannon entropy of the activation distribution divided by ln(E).
/// A single-expert row carries no uncertainty and scores 0.
template <typename Derived>
double normalized_entropy(const Eigen::DenseBase<Derived>& counts) {
  const double total = detail::checked_total(counts, "normalized_entropy");
  if (counts.size() == 1) return 0.0;
  double h = 0;
  for (Eigen::Index i = 0; i < counts.size(); ++i) {
    const double p = static_cast<double>(counts(i)) / total;
    if (p > 0) h -= p * std::log(p);
  }
  return h / std::log(static_cast<double>(counts.size()));
}

/// Gini coefficient sum_i sum_j |x_i - x_j| / (2 E^2 mean), evaluated through
/// the sorted-rank identity in O(E log E).
template <typename Derived>
double gini(const Eigen::DenseBase<Derived>& counts) {
  const double total = detail::checked_total(counts, "gini");
  std::vector<double> x(static_cast<std::size_t>(counts.size()));
  for (Eigen::Index i = 0; i < counts.size(); ++i) x[static_cast<std::size_t>(i)] = static_cast<double>(counts(i));
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (2.0 * static_cast<double>(i + 1) - n - 1.0) * x[i];
  return acc / (n * total);
}

/// Coefficient of variation (population std / mean) of the counts.
template <typename Derived>
double imbalance_score(const Eigen::DenseBase<Derived>& counts) {
  const double total = detail::checked_total(counts, "imbalance_score");
  const double n = static_cast<double>(counts.size());
  const double mean = total / n;
  double ss = 0;
  for (Eigen::Index i = 0; i < counts.size(); ++i) {
    const double d = static_cast<double>(counts(i)) - mean;
    ss += d * d;
  }
  return std::sqrt(ss / n) / mean;
}

struct BalanceMetrics {
  double utilization = 0;
  double entropy = 0;
  double gini = 0;
  double imbalance = 0;
};

template <typename Derived>
BalanceMetrics balance_metrics(const Eigen::DenseBase<Derived>& counts) {
  return {expert_utilization(counts), normalized_entropy(counts), gini(counts),
          imbalance_score(counts)};
}

/// {"0": {utilization, entropy, gini, imbalance}, ..., "global": {...}}.
/// Layers with no activations report utilization only.
nlohmann::ordered_json metrics_summary(const ActivationLog& log);

/// CSV "layer,expert,count,weight_sum", layer-major.
std::string heatmap_csv(const ActivationLog& log);
void export_heatmap(const ActivationLog& log, const std::filesystem::path& path);


struct RankTest {
  double u = 0;        // Mann-Whitney U of the first sample
  double p_value = 1;  // one-sided
  bool exact = false;  // full permutation distribution (else normal approximation)
};

/// One-sided Mann-Whitney test of "a tends to be smaller than b". Uses the
/// exact permutation distribution of U (ties included) when the number of
/// splits is at most 2e6, otherwise the tie-corrected normal approximation.
RankTest mann_whitney_less(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace moelab
