// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moelab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <utility>

#include "moelab/rng.hpp"

namespace moelab {

void ModelConfig::validate() const {
  if (num_layers < 1 || num_experts < 1 || d_model < 1 || d_ff < 1 || vocab_size < 1 ||
      max_seq_len < 1)
    throw ConfigError("ModelConfig: all dimensions must be >= 1");
  if (top_k < 1 || top_k > num_experts)
    throw ConfigError("ModelConfig: top_k must lie in [1, num_experts]");
  if (eos_token < -1 || eos_token >= vocab_size)
    throw ConfigError("ModelConfig: eos_token outside the vocabulary");
  if (!(init_scale > 0) || !std::isfinite(init_scale))
    throw ConfigError("ModelConfig: init_scale must be positive");
}

std::string to_string(ExpertId id) {
  return "(" + std::to_string(id.layer) + ", " + std::to_string(id.expert) + ")";
}

namespace {

ExpertWeights make_expert(const ModelConfig& c) {
  return {Tensor::Zero(c.d_model, c.d_ff), Tensor::Zero(c.d_ff, c.d_model)};
}

bool is_layer_norm(const std::string& name) {
  return name.find("ln") != std::string::npos;
}

}  // namespace

MoEModel MoEModel::zeros(const ModelConfig& c) {
  c.validate();
  MoEModel m;
  m.config = c;
  m.embedding = Tensor::Zero(c.vocab_size, c.d_model);
  m.position = Tensor::Zero(c.max_seq_len, c.d_model);
  m.layers.resize(static_cast<std::size_t>(c.num_layers));
  for (auto& layer : m.layers) {
    layer.ln1_gain = Tensor::Zero(1, c.d_model);
    layer.ln1_bias = Tensor::Zero(1, c.d_model);
    layer.wq = Tensor::Zero(c.d_model, c.d_model);
    layer.wk = Tensor::Zero(c.d_model, c.d_model);
    layer.wv = Tensor::Zero(c.d_model, c.d_model);
    layer.wo = Tensor::Zero(c.d_model, c.d_model);
    layer.ln2_gain = Tensor::Zero(1, c.d_model);
    layer.ln2_bias = Tensor::Zero(1, c.d_model);
    layer.router = Tensor::Zero(c.d_model, c.num_experts);
    layer.experts.assign(static_cast<std::size_t>(c.num_experts), make_expert(c));
    if (c.use_shared_expert) layer.shared = make_expert(c);
  }
  m.lnf_gain = Tensor::Zero(1, c.d_model);
  m.lnf_bias = Tensor::Zero(1, c.d_model);
  m.head = Tensor::Zero(c.d_model, c.vocab_size);
  return m;
}

MoEModel MoEModel::initialize(const ModelConfig& c, std::uint64_t seed) {
  MoEModel m = zeros(c);
  const auto names = parameter_names(c);
  const auto params = parameters(m);
  RngStream rng(seed);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = *params[i];
    if (is_layer_norm(names[i])) {
      if (names[i].ends_with("gain")) t.setOnes();
      continue;
    }
    const Vec draws = sample_normal(rng, c.init_scale, t.size());
    std::copy(draws.data(), draws.data() + draws.size(), t.data());
  }
  return m;
}

const ExpertWeights& MoEModel::expert(ExpertId id) const {
  if (id.layer < 0 || id.layer >= config.num_layers || id.expert < 0 ||
      id.expert >= config.num_experts)
    throw DomainError("expert id " + to_string(id) + " out of range");
  return layers[static_cast<std::size_t>(id.layer)].experts[static_cast<std::size_t>(id.expert)];
}

ExpertWeights& MoEModel::expert(ExpertId id) {
  return const_cast<ExpertWeights&>(std::as_const(*this).expert(id));
}

namespace {

template <typename Model, typename Out>
void collect(Model& m, Out& out) {
  out.push_back(&m.embedding);
  out.push_back(&m.position);
  for (auto& layer : m.layers) {
    for (auto* t : {&layer.ln1_gain, &layer.ln1_bias, &layer.wq, &layer.wk, &layer.wv, &layer.wo,
                    &layer.ln2_gain, &layer.ln2_bias, &layer.router})
      out.push_back(t);
    for (auto& e : layer.experts) {
      out.push_back(&e.w_in);
      out.push_back(&e.w_out);
    }
    if (layer.shared) {
      out.push_back(&layer.shared->w_in);
      out.push_back(&layer.shared->w_out);
    }
  }
  out.push_back(&m.lnf_gain);
  out.push_back(&m.lnf_bias);
  out.push_back(&m.head);
}

}  // namespace

std::vector<Tensor*> parameters(MoEModel& model) {
  std::vector<Tensor*> out;
  collect(model, out);
  return out;
}

std::vector<const Tensor*> parameters(const MoEModel& model) {
  std::vector<const Tensor*> out;
  collect(model, out);
  return out;
}

std::vector<std::string> parameter_names(const ModelConfig& c) {
  std::vector<std::string> n{"embedding", "position"};
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* s : {"ln1_gain", "ln1_bias", "wq", "wk", "wv", "wo", "ln2_gain", "ln2_bias",
                          "router"})
      n.push_back(p + s);
    for (int e = 0; e < c.num_experts; ++e) {
      n.push_back(p + "expert" + std::to_string(e) + ".w_in");
      n.push_back(p + "expert" + std::to_string(e) + ".w_out");
    }
    if (c.use_shared_expert) {
      n.push_back(p + "shared.w_in");
      n.push_back(p + "shared.w_out");
    }
  }
  n.insert(n.end(), {"lnf_gain", "lnf_bias", "head"});
  return n;
}

bool bitwise_equal(const MoEModel& a, const MoEModel& b) {
  if (!(a.config == b.config)) return false;
  const auto pa = parameters(a);
  const auto pb = parameters(b);
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->rows() != pb[i]->rows() || pa[i]->cols() != pb[i]->cols()) return false;
    if (std::memcmp(pa[i]->data(), pb[i]->data(),
                    static_cast<std::size_t>(pa[i]->size()) * sizeof(double)) != 0)
      return false;
  }
  return true;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const Eigen::Index d = x.cols();
  Tensor out(x.rows(), d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mean = 0;
    for (Eigen::Index j = 0; j < d; ++j) mean += x(i, j);
    mean /= static_cast<double>(d);
    double var = 0;
    for (Eigen::Index j = 0; j < d; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (Eigen::Index j = 0; j < d; ++j) out(i, j) = gain(0, j) * ((x(i, j) - mean) * inv) + bias(0, j);
  }
  return out;
}

Tensor expert_forward(const ExpertWeights& expert, const Tensor& x) {
  Tensor z = matmul(x, expert.w_in);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = silu(z.data()[i]);
  return matmul(z, expert.w_out);
}

Routing route_topk(const RowVec& logits, int k) {
  const int n = static_cast<int>(logits.size());
  if (k < 1 || k > n)
    throw DomainError("route_topk: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    return logits(a) > logits(b) || (logits(a) == logits(b) && a < b);
  });
  order.resize(static_cast<std::size_t>(k));
  RowVec selected(k);
  for (int i = 0; i < k; ++i) selected(i) = logits(order[static_cast<std::size_t>(i)]);
  return {std::move(order), softmax(selected)};
}

RowVec moe_layer_forward(const LayerWeights& layer, int layer_index, int top_k,
                         const RowVec& hidden, ActivationLog* recorder) {
  if (!all_finite(hidden)) throw InputError("moe_layer_forward: non-finite hidden state");
  const Tensor x = hidden;
  const RowVec logits = matmul(x, layer.router);
  const Routing r = route_topk(logits, top_k);
  RowVec out = RowVec::Zero(hidden.size());
  for (std::size_t i = 0; i < r.indices.size(); ++i) {
    const int e = r.indices[i];
    const double w = r.weights(static_cast<Eigen::Index>(i));
    out += w * expert_forward(layer.experts[static_cast<std::size_t>(e)], x);
    if (recorder) recorder->record(layer_index, e, w);
  }
  if (layer.shared) out += expert_forward(*layer.shared, x);
  return out;
}

KvCache::KvCache(const ModelConfig& c)
    : keys_(static_cast<std::size_t>(c.num_layers), Tensor::Zero(c.max_seq_len, c.d_model)),
      values_(static_cast<std::size_t>(c.num_layers), Tensor::Zero(c.max_seq_len, c.d_model)),
      capacity_(c.max_seq_len) {}

void KvCache::set_row(int l, const RowVec& k, const RowVec& v) {
  if (length_ >= capacity_) throw CapacityError("KV cache full");
  keys_[static_cast<std::size_t>(l)].row(length_) = k;
  values_[static_cast<std::size_t>(l)].row(length_) = v;
}

void KvCache::advance() {
  if (length_ >= capacity_) throw CapacityError("KV cache full");
  ++length_;
}

RowVec decode_step(const MoEModel& model, int token, KvCache& cache, ActivationLog* recorder) {
  const ModelConfig& c = model.config;
  if (token < 0 || token >= c.vocab_size)
    throw InputError("token id " + std::to_string(token) + " outside vocabulary of " +
                     std::to_string(c.vocab_size));
  const int t = cache.length();
  if (t >= c.max_seq_len || t >= cache.capacity())
    throw CapacityError("sequence exceeds max_seq_len=" + std::to_string(c.max_seq_len));

  Tensor x = model.embedding.row(token) + model.position.row(t);
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.d_model));
  for (int l = 0; l < c.num_layers; ++l) {
    const LayerWeights& layer = model.layers[static_cast<std::size_t>(l)];
    if (c.use_attention) {
      const Tensor xn = layer_norm(x, layer.ln1_gain, layer.ln1_bias);
      const Tensor q = matmul(xn, layer.wq);
      cache.set_row(l, matmul(xn, layer.wk), matmul(xn, layer.wv));
      // Row t was just written and is visible through the storage view.
      const Tensor& keys = cache.key_storage(l);
      const Tensor& vals = cache.value_storage(l);
      RowVec scores(t + 1);
      for (int j = 0; j <= t; ++j) {
        double acc = 0;
        for (int p = 0; p < c.d_model; ++p) acc += q(0, p) * keys(j, p);
        scores(j) = acc * scale;
      }
      const RowVec attn = softmax(scores);
      Tensor ctx = Tensor::Zero(1, c.d_model);
      for (int j = 0; j <= t; ++j) {
        const double a = attn(j);
        for (int p = 0; p < c.d_model; ++p) ctx(0, p) += a * vals(j, p);
      }
      x += matmul(ctx, layer.wo);
    }
    const Tensor xn2 = layer_norm(x, layer.ln2_gain, layer.ln2_bias);
    x += moe_layer_forward(layer, l, c.top_k, xn2, recorder);
  }
  cache.advance();
  if (recorder) recorder->add_tokens(1);
  const Tensor xf = layer_norm(x, model.lnf_gain, model.lnf_bias);
  return matmul(xf, model.head);
}

PrefillResult forward_prefill(const MoEModel& model, std::span<const int> tokens,
                              ActivationLog* recorder) {
  const ModelConfig& c = model.config;
  if (static_cast<int>(tokens.size()) > c.max_seq_len)
    throw CapacityError("prompt of length " + std::to_string(tokens.size()) +
                        " exceeds max_seq_len=" + std::to_string(c.max_seq_len));
  for (int tok : tokens)
    if (tok < 0 || tok >= c.vocab_size)
      throw InputError("token id " + std::to_string(tok) + " outside vocabulary");
  PrefillResult r{Tensor(static_cast<Eigen::Index>(tokens.size()), c.vocab_size), KvCache(c)};
  for (std::size_t i = 0; i < tokens.size(); ++i)
    r.logits.row(static_cast<Eigen::Index>(i)) = decode_step(model, tokens[i], r.cache, recorder);
  return r;
}

std::vector<int> greedy_decode(const MoEModel& model, std::span<const int> prompt, int max_new,
                               ActivationLog* recorder) {
  const ModelConfig& c = model.config;
  if (max_new < 0) throw InputError("greedy_decode: max_new must be >= 0");
  if (static_cast<long>(prompt.size()) + max_new > c.max_seq_len)
    throw CapacityError("prompt length " + std::to_string(prompt.size()) + " + max_new " +
                        std::to_string(max_new) + " exceeds max_seq_len=" +
                        std::to_string(c.max_seq_len));
  std::vector<int> out;
  if (max_new == 0) return out;
  if (prompt.empty()) throw InputError("greedy_decode: empty prompt");
  PrefillResult pre = forward_prefill(model, prompt, recorder);
  RowVec last = pre.logits.row(pre.logits.rows() - 1);
  for (int i = 0; i < max_new; ++i) {
    const int next = static_cast<int>(argmax(last));
    out.push_back(next);
    if (next == c.eos_token || i + 1 == max_new) break;
    last = decode_step(model, next, pre.cache, recorder);
  }
  return out;
}

}  // namespace moelab
