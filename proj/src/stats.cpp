// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moelab/stats.hpp"

#include <algorithm>
#include <cmath>

#include "moelab/format.hpp"

namespace moelab {

ActivationLog::ActivationLog(int num_layers, int num_experts)
    : counts_(CountMatrix::Zero(num_layers, num_experts)),
      weights_(Tensor::Zero(num_layers, num_experts)) {
  if (num_layers < 1 || num_experts < 1) throw ShapeError("ActivationLog: empty shape");
}

void ActivationLog::record(int layer, int expert, double weight) {
  if (layer < 0 || layer >= num_layers() || expert < 0 || expert >= num_experts())
    throw ShapeError("ActivationLog::record: (" + std::to_string(layer) + ", " +
                     std::to_string(expert) + ") out of range");
  counts_(layer, expert) += 1;
  weights_(layer, expert) += weight;
}

ActivationLog merge(const ActivationLog& a, const ActivationLog& b) {
  if (a.num_layers() != b.num_layers() || a.num_experts() != b.num_experts())
    throw ShapeError("merge: activation logs have different shapes");
  ActivationLog out = a;
  out.counts_ += b.counts_;
  out.weights_ += b.weights_;
  out.tokens_ += b.tokens_;
  return out;
}

nlohmann::ordered_json metrics_summary(const ActivationLog& log) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  auto to_json = [](const BalanceMetrics& m) {
    return nlohmann::ordered_json{{"utilization", m.utilization},
                                  {"entropy", m.entropy},
                                  {"gini", m.gini},
                                  {"imbalance", m.imbalance}};
  };
  for (int l = 0; l < log.num_layers(); ++l) {
    const auto row = log.counts().row(l);
    if (row.sum() > 0) {
      out[std::to_string(l)] = to_json(balance_metrics(row));
    } else {
      out[std::to_string(l)] = {{"utilization", expert_utilization(row)}};
    }
  }
  const CountMatrix& c = log.counts();
  const Eigen::Map<const RowVectorX<std::int64_t>> flat(c.data(), c.size());
  if (c.size() > 0 && c.sum() > 0) out["global"] = to_json(balance_metrics(flat));
  return out;
}

std::string heatmap_csv(const ActivationLog& log) {
  std::string s = "layer,expert,count,weight_sum\n";
  for (int l = 0; l < log.num_layers(); ++l)
    for (int e = 0; e < log.num_experts(); ++e) {
      s += std::to_string(l) + ',' + std::to_string(e) + ',' +
           std::to_string(log.counts()(l, e)) + ',' + format_double(log.weight_sums()(l, e)) + '\n';
    }
  return s;
}

void export_heatmap(const ActivationLog& log, const std::filesystem::path& path) {
  write_text_file(path, heatmap_csv(log));
}

namespace {

// U statistic of `a` against `b`: pairs with a_i > b_j count 1, ties 1/2.
double u_statistic(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

double binomial(int n, int k) {
  double r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

RankTest mann_whitney_less(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw DomainError("mann_whitney_less: empty sample");
  RankTest t;
  t.u = u_statistic(a, b);
  const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  if (binomial(n + m, n) <= 2e6) {
    // Enumerate every way to label n of the pooled values as "a".
    t.exact = true;
    long long total = 0, as_small = 0;
    std::vector<int> pick(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pick[static_cast<std::size_t>(i)] = i;
    std::vector<double> sa(static_cast<std::size_t>(n)), sb;
    for (;;) {
      sb.clear();
      std::size_t next = 0;
      for (int i = 0; i < n + m; ++i) {
        if (next < pick.size() && pick[next] == i) sa[next++] = pooled[static_cast<std::size_t>(i)];
        else sb.push_back(pooled[static_cast<std::size_t>(i)]);
      }
      ++total;
      if (u_statistic(sa, sb) <= t.u + 1e-9) ++as_small;
      int i = n - 1;
      while (i >= 0 && pick[static_cast<std::size_t>(i)] == m + i) --i;
      if (i < 0) break;
      ++pick[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < n; ++j) pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
    }
    t.p_value = static_cast<double>(as_small) / static_cast<double>(total);
    return t;
  }
  // Normal approximation with tie correction and continuity correction.
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double c = static_cast<double>(j - i);
    tie_term += c * c * c - c;
    i = j;
  }
  const double N = n + m;
  const double mean = n * m / 2.0;
  const double var = n * m / 12.0 * ((N + 1) - tie_term / (N * (N - 1)));
  if (var <= 0) return t;
  const double z = (t.u - mean + 0.5) / std::sqrt(var);
  t.p_value = 0.5 * std::erfc(-z / std::sqrt(2.0));
  return t;
}

}  // namespace moelab
