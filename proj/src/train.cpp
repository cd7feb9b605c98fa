// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moelab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <utility>

#include "moelab/rng.hpp"

namespace moelab {

namespace {

struct NormCache {
  Tensor xhat;
  Vec inv;
};

// Same arithmetic as layer_norm(), keeping what the backward pass needs.
Tensor norm_forward(const Tensor& x, const Tensor& gain, const Tensor& bias, NormCache& c) {
  const Eigen::Index d = x.cols();
  c.xhat.resize(x.rows(), d);
  c.inv.resize(x.rows());
  Tensor out(x.rows(), d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mean = 0;
    for (Eigen::Index j = 0; j < d; ++j) mean += x(i, j);
    mean /= static_cast<double>(d);
    double var = 0;
    for (Eigen::Index j = 0; j < d; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    c.inv(i) = inv;
    for (Eigen::Index j = 0; j < d; ++j) {
      c.xhat(i, j) = (x(i, j) - mean) * inv;
      out(i, j) = gain(0, j) * c.xhat(i, j) + bias(0, j);
    }
  }
  return out;
}

Tensor norm_backward(const Tensor& dy, const NormCache& c, const Tensor& gain, Tensor& dgain,
                     Tensor& dbias) {
  const Eigen::Index d = dy.cols();
  Tensor dx(dy.rows(), d);
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    double mean_g = 0, mean_gx = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      dgain(0, j) += dy(i, j) * c.xhat(i, j);
      dbias(0, j) += dy(i, j);
      const double g = dy(i, j) * gain(0, j);
      mean_g += g;
      mean_gx += g * c.xhat(i, j);
    }
    mean_g /= static_cast<double>(d);
    mean_gx /= static_cast<double>(d);
    for (Eigen::Index j = 0; j < d; ++j)
      dx(i, j) = c.inv(i) * (dy(i, j) * gain(0, j) - mean_g - c.xhat(i, j) * mean_gx);
  }
  return dx;
}

struct ExpertCall {
  int expert = -1;  // -1 = shared expert
  double weight = 1.0;
  Tensor z;    // pre-activation, 1 x d_ff
  Tensor act;  // silu(z)
  Tensor out;  // 1 x d_model
};

struct TokenMoe {
  std::vector<int> selected;
  RowVec weights;
  std::vector<ExpertCall> calls;  // selected experts in order, then shared
};

struct LayerTrace {
  NormCache ln1;
  Tensor xn1, q, k, v, attn, ctx;
  NormCache ln2;
  Tensor xn2;
  std::vector<TokenMoe> moe;
};

struct SequenceTrace {
  std::vector<LayerTrace> layers;
  NormCache lnf;
  Tensor xf;
  Tensor logits;
};

ExpertCall run_expert(const ExpertWeights& w, const Tensor& x, int id, double weight) {
  ExpertCall c;
  c.expert = id;
  c.weight = weight;
  c.z = matmul(x, w.w_in);
  c.act = c.z;
  for (Eigen::Index i = 0; i < c.act.size(); ++i) c.act.data()[i] = silu(c.z.data()[i]);
  c.out = matmul(c.act, w.w_out);
  return c;
}

SequenceTrace forward_sequence(const MoEModel& model, std::span<const int> input) {
  const ModelConfig& c = model.config;
  const auto T = static_cast<Eigen::Index>(input.size());
  if (T > c.max_seq_len) throw CapacityError("training sequence exceeds max_seq_len");
  SequenceTrace tr;
  Tensor x(T, c.d_model);
  for (Eigen::Index t = 0; t < T; ++t) {
    const int tok = input[static_cast<std::size_t>(t)];
    if (tok < 0 || tok >= c.vocab_size) throw InputError("token id outside vocabulary");
    x.row(t) = model.embedding.row(tok) + model.position.row(t);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.d_model));
  tr.layers.resize(static_cast<std::size_t>(c.num_layers));
  for (int l = 0; l < c.num_layers; ++l) {
    const LayerWeights& w = model.layers[static_cast<std::size_t>(l)];
    LayerTrace& lt = tr.layers[static_cast<std::size_t>(l)];
    if (c.use_attention) {
      lt.xn1 = norm_forward(x, w.ln1_gain, w.ln1_bias, lt.ln1);
      lt.q = matmul(lt.xn1, w.wq);
      lt.k = matmul(lt.xn1, w.wk);
      lt.v = matmul(lt.xn1, w.wv);
      lt.attn = Tensor::Zero(T, T);
      lt.ctx = Tensor::Zero(T, c.d_model);
      for (Eigen::Index t = 0; t < T; ++t) {
        RowVec scores(t + 1);
        for (Eigen::Index j = 0; j <= t; ++j) {
          double acc = 0;
          for (Eigen::Index p = 0; p < c.d_model; ++p) acc += lt.q(t, p) * lt.k(j, p);
          scores(j) = acc * scale;
        }
        const RowVec a = softmax(scores);
        lt.attn.row(t).head(t + 1) = a;
        for (Eigen::Index j = 0; j <= t; ++j)
          for (Eigen::Index p = 0; p < c.d_model; ++p) lt.ctx(t, p) += a(j) * lt.v(j, p);
      }
      x += matmul(lt.ctx, w.wo);
    }
    lt.xn2 = norm_forward(x, w.ln2_gain, w.ln2_bias, lt.ln2);
    lt.moe.resize(static_cast<std::size_t>(T));
    for (Eigen::Index t = 0; t < T; ++t) {
      const Tensor row = lt.xn2.row(t);
      const RowVec logits = matmul(row, w.router);
      Routing r = route_topk(logits, c.top_k);
      TokenMoe& tm = lt.moe[static_cast<std::size_t>(t)];
      RowVec y = RowVec::Zero(c.d_model);
      for (std::size_t i = 0; i < r.indices.size(); ++i) {
        const int e = r.indices[i];
        const double gw = r.weights(static_cast<Eigen::Index>(i));
        tm.calls.push_back(run_expert(w.experts[static_cast<std::size_t>(e)], row, e, gw));
        y += gw * tm.calls.back().out;
      }
      if (w.shared) {
        tm.calls.push_back(run_expert(*w.shared, row, -1, 1.0));
        y += tm.calls.back().out;
      }
      tm.selected = std::move(r.indices);
      tm.weights = std::move(r.weights);
      x.row(t) += y;
    }
  }
  tr.xf = norm_forward(x, model.lnf_gain, model.lnf_bias, tr.lnf);
  tr.logits = matmul(tr.xf, model.head);
  return tr;
}

Tensor expert_backward(const ExpertWeights& w, const ExpertCall& call, const Tensor& x,
                       const Tensor& dout, ExpertWeights& g) {
  g.w_out.noalias() += call.act.transpose() * dout;
  Tensor dz = dout * w.w_out.transpose();
  for (Eigen::Index i = 0; i < dz.size(); ++i) dz.data()[i] *= silu_grad(call.z.data()[i]);
  g.w_in.noalias() += x.transpose() * dz;
  return dz * w.w_in.transpose();
}

void backward_sequence(const MoEModel& model, std::span<const int> input, const SequenceTrace& tr,
                       const Tensor& dlogits, MoEModel& g) {
  const ModelConfig& c = model.config;
  const auto T = static_cast<Eigen::Index>(input.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.d_model));

  g.head.noalias() += tr.xf.transpose() * dlogits;
  const Tensor dxf = dlogits * model.head.transpose();
  Tensor dx = norm_backward(dxf, tr.lnf, model.lnf_gain, g.lnf_gain, g.lnf_bias);

  for (int l = c.num_layers - 1; l >= 0; --l) {
    const LayerWeights& w = model.layers[static_cast<std::size_t>(l)];
    LayerWeights& gw = g.layers[static_cast<std::size_t>(l)];
    const LayerTrace& lt = tr.layers[static_cast<std::size_t>(l)];

    // MoE sublayer: x_out = h + moe(LN2(h)).
    Tensor dxn2 = Tensor::Zero(T, c.d_model);
    for (Eigen::Index t = 0; t < T; ++t) {
      const TokenMoe& tm = lt.moe[static_cast<std::size_t>(t)];
      const Tensor row = lt.xn2.row(t);
      const Tensor dy = dx.row(t);
      const std::size_t k = tm.selected.size();
      RowVec dweight(static_cast<Eigen::Index>(k));
      Tensor drow = Tensor::Zero(1, c.d_model);
      for (const ExpertCall& call : tm.calls) {
        if (call.expert < 0) {
          drow += expert_backward(*w.shared, call, row, dy, *gw.shared);
          continue;
        }
        const auto e = static_cast<std::size_t>(call.expert);
        const auto slot = static_cast<Eigen::Index>(
            std::find(tm.selected.begin(), tm.selected.end(), call.expert) - tm.selected.begin());
        dweight(slot) = (dy.array() * call.out.array()).sum();
        drow += expert_backward(w.experts[e], call, row, call.weight * dy, gw.experts[e]);
      }
      // Softmax over the selected logits.
      const double mix = (tm.weights.array() * dweight.array()).sum();
      for (std::size_t i = 0; i < k; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double dlogit = tm.weights(ii) * (dweight(ii) - mix);
        const int e = tm.selected[i];
        gw.router.col(e) += dlogit * row.row(0).transpose();
        drow += dlogit * w.router.col(e).transpose();
      }
      dxn2.row(t) = drow;
    }
    dx += norm_backward(dxn2, lt.ln2, w.ln2_gain, gw.ln2_gain, gw.ln2_bias);

    if (c.use_attention) {
      // Attention sublayer: h = x + (softmax(q k^T * scale) v) wo.
      gw.wo.noalias() += lt.ctx.transpose() * dx;
      const Tensor dctx = dx * w.wo.transpose();
      const Tensor dattn = dctx * lt.v.transpose();
      Tensor dv = lt.attn.transpose() * dctx;
      Tensor dscores = Tensor::Zero(T, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        double dot = 0;
        for (Eigen::Index j = 0; j <= t; ++j) dot += dattn(t, j) * lt.attn(t, j);
        for (Eigen::Index j = 0; j <= t; ++j)
          dscores(t, j) = lt.attn(t, j) * (dattn(t, j) - dot) * scale;
      }
      const Tensor dq = dscores * lt.k;
      const Tensor dk = dscores.transpose() * lt.q;
      gw.wq.noalias() += lt.xn1.transpose() * dq;
      gw.wk.noalias() += lt.xn1.transpose() * dk;
      gw.wv.noalias() += lt.xn1.transpose() * dv;
      const Tensor dxn1 =
          dq * w.wq.transpose() + dk * w.wk.transpose() + dv * w.wv.transpose();
      dx += norm_backward(dxn1, lt.ln1, w.ln1_gain, gw.ln1_gain, gw.ln1_bias);
    }
  }
  for (Eigen::Index t = 0; t < T; ++t) {
    g.embedding.row(input[static_cast<std::size_t>(t)]) += dx.row(t);
    g.position.row(t) += dx.row(t);
  }
}

long count_targets(std::span<const TrainExample> batch) {
  long n = 0;
  for (const auto& ex : batch) {
    if (ex.tokens.size() < 2 || ex.answer_start < 1 ||
        ex.answer_start >= static_cast<int>(ex.tokens.size()))
      throw InputError("training example has no answer tokens");
    n += static_cast<long>(ex.tokens.size()) - ex.answer_start;
  }
  if (n == 0) throw InputError("empty training batch");
  return n;
}

// -log softmax(row)[target]; fills probs when requested.
double cross_entropy(const Eigen::Ref<const RowVec>& row, int target, RowVec* probs) {
  const double top = row.maxCoeff();
  double total = 0;
  for (Eigen::Index i = 0; i < row.size(); ++i) total += std::exp(row(i) - top);
  const double lse = top + std::log(total);
  if (probs) *probs = (row.array() - lse).unaryExpr([](double x) { return std::exp(x); }).matrix();
  return lse - row(target);
}

void append_routing(const SequenceTrace& tr, int num_experts, std::vector<int>& out) {
  for (std::size_t l = 0; l < tr.layers.size(); ++l)
    for (const TokenMoe& tm : tr.layers[l].moe)
      for (int e : tm.selected) out.push_back(static_cast<int>(l) * num_experts + e);
}

double forward_loss(const MoEModel& model, std::span<const TrainExample> batch,
                    std::vector<int>* routing) {
  const double n = static_cast<double>(count_targets(batch));
  double loss = 0;
  for (const auto& ex : batch) {
    const std::span<const int> input(ex.tokens.data(), ex.tokens.size() - 1);
    const SequenceTrace tr = forward_sequence(model, input);
    for (std::size_t t = static_cast<std::size_t>(ex.answer_start) - 1; t < input.size(); ++t)
      loss += cross_entropy(tr.logits.row(static_cast<Eigen::Index>(t)), ex.tokens[t + 1], nullptr);
    if (routing) append_routing(tr, model.config.num_experts, *routing);
  }
  return loss / n;
}

void set_zero(MoEModel& m) {
  for (Tensor* t : parameters(m)) t->setZero();
}

}  // namespace

TrainExample make_example(const Sample& sample, int eos_token) {
  TrainExample ex;
  ex.tokens = sample.prompt;
  ex.tokens.insert(ex.tokens.end(), sample.gold.begin(), sample.gold.end());
  if (eos_token >= 0) ex.tokens.push_back(eos_token);
  ex.answer_start = static_cast<int>(sample.prompt.size());
  return ex;
}

void TrainConfig::validate() const {
  if (steps < 0 || batch_size < 1 || !(learning_rate >= 0) || eval_every < 0 ||
      !(target_accuracy >= 0 && target_accuracy <= 1))
    throw ConfigError("TrainConfig: hyperparameters out of range");
}

double batch_loss(const MoEModel& model, std::span<const TrainExample> batch) {
  return forward_loss(model, batch, nullptr);
}

double loss_and_gradient(const MoEModel& model, std::span<const TrainExample> batch,
                         MoEModel& grad, std::vector<int>* routing) {
  const double n = static_cast<double>(count_targets(batch));
  if (!(grad.config == model.config)) grad = MoEModel::zeros(model.config);
  set_zero(grad);
  double loss = 0;
  for (const auto& ex : batch) {
    const std::span<const int> input(ex.tokens.data(), ex.tokens.size() - 1);
    const SequenceTrace tr = forward_sequence(model, input);
    Tensor dlogits = Tensor::Zero(tr.logits.rows(), tr.logits.cols());
    RowVec probs;
    for (std::size_t t = static_cast<std::size_t>(ex.answer_start) - 1; t < input.size(); ++t) {
      const auto row = static_cast<Eigen::Index>(t);
      const int target = ex.tokens[t + 1];
      loss += cross_entropy(tr.logits.row(row), target, &probs);
      probs(target) -= 1.0;
      dlogits.row(row) = probs / n;
    }
    backward_sequence(model, input, tr, dlogits, grad);
    if (routing) append_routing(tr, model.config.num_experts, *routing);
  }
  return loss / n;
}

TrainResult train(const ModelConfig& config, const Dataset& train_data, const Dataset& eval_data,
                  const TaskSpec& task, const TrainConfig& tc,
                  const std::function<void(int, double)>& progress) {
  config.validate();
  tc.validate();
  if (train_data.samples.empty()) throw InputError("train: empty training set");
  if (config.eos_token < 0) throw ConfigError("train: model config needs an eos_token");
  if (config.vocab_size < vocab::kSize)
    throw ConfigError("train: vocab_size must cover the task vocabulary (" +
                      std::to_string(vocab::kSize) + ")");

  std::vector<TrainExample> examples;
  examples.reserve(train_data.samples.size());
  for (const Sample& s : train_data.samples) examples.push_back(make_example(s, config.eos_token));

  TrainResult r{MoEModel::initialize(config, tc.seed)};
  MoEModel grad = MoEModel::zeros(config);
  RngStream batch_rng(derive_seed(tc.seed, 0xBA7C4));
  std::vector<TrainExample> batch(static_cast<std::size_t>(tc.batch_size));

  auto evaluate = [&] {
    if (eval_data.samples.empty()) return;
    const ModelEvaluation ev = evaluate_model(r.model, eval_data, task);
    r.eval_ica = ev.outcome.ica;
    r.eval_pia = ev.outcome.pia;
    r.reached_target = r.eval_pia >= tc.target_accuracy;
  };

  for (int step = 0; step < tc.steps; ++step) {
    for (auto& slot : batch)
      slot = examples[static_cast<std::size_t>(batch_rng.next_below(examples.size()))];
    const double loss = loss_and_gradient(r.model, batch, grad);
    if (!std::isfinite(loss)) throw TrainingError(step, "loss diverged");
    auto params = parameters(r.model);
    const auto grads = parameters(grad);
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] -= tc.learning_rate * *grads[i];
    r.final_loss = loss;
    r.steps_run = step + 1;
    if (progress) progress(step, loss);
    if (tc.eval_every > 0 && (step + 1) % tc.eval_every == 0 && step + 1 < tc.steps) {
      evaluate();
      if (tc.stop_at_target && r.reached_target && r.eval_ica >= tc.target_accuracy) return r;
    }
  }
  evaluate();
  return r;
}

GradientCheck gradient_check(const MoEModel& model, std::span<const TrainExample> batch) {
  const ModelConfig& c = model.config;
  for (int d : {c.num_layers, c.num_experts, c.d_model, c.d_ff, c.vocab_size, c.max_seq_len})
    if (d > 8) throw ConfigError("gradient_check: every dimension must be <= 8");

  MoEModel grad = MoEModel::zeros(c);
  std::vector<int> base_routing;
  loss_and_gradient(model, batch, grad, &base_routing);
  const std::set<int> active(base_routing.begin(), base_routing.end());

  MoEModel probe = model;
  const auto names = parameter_names(c);
  const auto params = parameters(probe);
  const auto grads = parameters(std::as_const(grad));
  GradientCheck out;
  std::vector<int> routing;
  for (std::size_t i = 0; i < params.size(); ++i) {
    int layer = -1, expert = -1;
    if (std::sscanf(names[i].c_str(), "layer%d.expert%d.", &layer, &expert) == 2 &&
        !active.count(layer * c.num_experts + expert))
      continue;
    Tensor& t = *params[i];
    for (Eigen::Index j = 0; j < t.size(); ++j) {
      const double orig = t.data()[j];
      t.data()[j] = orig + kFiniteDifferenceStep;
      routing.clear();
      const double up = forward_loss(probe, batch, &routing);
      const bool same_up = routing == base_routing;
      t.data()[j] = orig - kFiniteDifferenceStep;
      routing.clear();
      const double down = forward_loss(probe, batch, &routing);
      const bool same_down = routing == base_routing;
      t.data()[j] = orig;
      if (!same_up || !same_down) {
        ++out.skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * kFiniteDifferenceStep);
      const double analytic = grads[i]->data()[j];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), kGradientCheckFloor});
      out.max_relative_error = std::max(out.max_relative_error, std::abs(numeric - analytic) / denom);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace moelab
