// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moelab/stats.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

struct ModelConfig {
  int num_layers = 4;
  int num_experts = 8;
  int top_k = 2;
  int d_model = 32;
  int d_ff = 64;
  int vocab_size = 32;
  int max_seq_len = 32;
  bool use_shared_expert = false;
  /// With attention disabled every layer is LN -> MoE only.
  bool use_attention = true;
  /// Greedy decoding stops after emitting this token; -1 disables.
  int eos_token = -1;
  /// Std of the normal initializer; also the scale used when an expert is
  /// re-randomized.
  double init_scale = 0.1;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ExpertId {
  int layer = 0;
  int expert = 0;
  friend auto operator<=>(const ExpertId&, const ExpertId&) = default;
};

std::string to_string(ExpertId id);

/// Expert FFN: silu(x * w_in) * w_out.
struct ExpertWeights {
  Tensor w_in;   // d_model x d_ff
  Tensor w_out;  // d_ff x d_model

  Eigen::Index param_count() const noexcept { return w_in.size() + w_out.size(); }
};

struct LayerWeights {
  Tensor ln1_gain, ln1_bias;  // 1 x d_model
  Tensor wq, wk, wv, wo;      // d_model x d_model
  Tensor ln2_gain, ln2_bias;  // 1 x d_model
  Tensor router;              // d_model x E
  std::vector<ExpertWeights> experts;
  std::optional<ExpertWeights> shared;
};

struct MoEModel {
  ModelConfig config;
  Tensor embedding;  // vocab x d_model
  Tensor position;   // max_seq_len x d_model
  std::vector<LayerWeights> layers;
  Tensor lnf_gain, lnf_bias;  // 1 x d_model
  Tensor head;                // d_model x vocab

  /// Normal(0, init_scale) weights, unit LayerNorm gains, zero biases.
  static MoEModel initialize(const ModelConfig& config, std::uint64_t seed);
  /// Same shapes, all zeros. Used as a gradient accumulator.
  static MoEModel zeros(const ModelConfig& config);

  const ExpertWeights& expert(ExpertId id) const;
  ExpertWeights& expert(ExpertId id);
};

/// Every parameter tensor in checkpoint order: embedding, position, then per
/// layer ln1 gain/bias, wq, wk, wv, wo, ln2 gain/bias, router, experts
/// (w_in, w_out each), shared expert (w_in, w_out) when configured; final
/// LayerNorm gain/bias; head.
std::vector<Tensor*> parameters(MoEModel& model);
std::vector<const Tensor*> parameters(const MoEModel& model);
std::vector<std::string> parameter_names(const ModelConfig& config);

/// True when every parameter tensor compares bitwise equal.
bool bitwise_equal(const MoEModel& a, const MoEModel& b);

// ---------------------------------------------------------------------------
// Building blocks shared by inference and training.

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise LayerNorm: gain * (x - mean) / sqrt(var + eps) + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

inline double silu(double z) { return z / (1.0 + std::exp(-z)); }
inline double silu_grad(double z) {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

Tensor expert_forward(const ExpertWeights& expert, const Tensor& x);

struct Routing {
  std::vector<int> indices;  // descending logit order
  RowVec weights;            // softmax over the selected logits
};

/// Top-k expert selection. Ties resolve to the lower expert index; weights
/// are renormalized over the selected logits only.
Routing route_topk(const RowVec& router_logits, int k);

/// Routed expert mixture (plus the shared expert when present) for one
/// already-normalized hidden row. When `recorder` is set, each selected
/// expert's count and gate weight are accumulated under `layer_index`.
RowVec moe_layer_forward(const LayerWeights& layer, int layer_index, int top_k,
                         const RowVec& hidden, ActivationLog* recorder = nullptr);

// ---------------------------------------------------------------------------
// Inference.

/// Per-layer attention keys and values for every processed position.
class KvCache {
 public:
  KvCache() = default;
  explicit KvCache(const ModelConfig& config);

  int length() const noexcept { return length_; }
  int capacity() const noexcept { return capacity_; }
  int num_layers() const noexcept { return static_cast<int>(keys_.size()); }

  /// Rows [0, length) of layer `l`.
  auto keys(int l) const { return keys_[static_cast<std::size_t>(l)].topRows(length_); }
  auto values(int l) const { return values_[static_cast<std::size_t>(l)].topRows(length_); }

  /// Full preallocated storage, including a row written but not yet
  /// committed by advance().
  const Tensor& key_storage(int l) const { return keys_[static_cast<std::size_t>(l)]; }
  const Tensor& value_storage(int l) const { return values_[static_cast<std::size_t>(l)]; }

  void set_row(int l, const RowVec& k, const RowVec& v);
  void advance();

 private:
  std::vector<Tensor> keys_, values_;
  int length_ = 0;
  int capacity_ = 0;
};

/// Processes one token at position cache.length() and returns its next-token
/// logits. Increments recorder->tokens_processed once.
RowVec decode_step(const MoEModel& model, int token, KvCache& cache,
                   ActivationLog* recorder = nullptr);

struct PrefillResult {
  Tensor logits;  // len x vocab
  KvCache cache;
};

PrefillResult forward_prefill(const MoEModel& model, std::span<const int> tokens,
                              ActivationLog* recorder = nullptr);

/// Greedy continuation of `prompt` (argmax, lowest id on ties) using
/// incremental KV-cached steps. Stops after max_new tokens or once the
/// configured EOS token is emitted (the EOS is included in the result).
std::vector<int> greedy_decode(const MoEModel& model, std::span<const int> prompt, int max_new,
                               ActivationLog* recorder = nullptr);

}  // namespace moelab
