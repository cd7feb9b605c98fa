// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "moelab/evaluator.hpp"
#include "moelab/model.hpp"
#include "moelab/tasks.hpp"

namespace moelab {

/// A full token sequence; next-token loss is taken on positions whose target
/// index is >= answer_start.
struct TrainExample {
  std::vector<int> tokens;
  int answer_start = 1;
};

/// prompt + gold + EOS, with the loss restricted to the gold continuation.
TrainExample make_example(const Sample& sample, int eos_token);

struct TrainConfig {
  int steps = 5000;
  double learning_rate = 0.1;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double target_accuracy = 0.95;
  /// Held-out evaluation cadence; 0 evaluates only at the end.
  int eval_every = 250;
  /// Finish as soon as a periodic evaluation meets the target.
  bool stop_at_target = false;

  void validate() const;
};

struct TrainResult {
  MoEModel model;
  int steps_run = 0;
  double final_loss = 0;
  double eval_ica = 0;
  double eval_pia = 0;
  bool reached_target = false;
};

/// Mean cross-entropy over every answer token of the batch.
double batch_loss(const MoEModel& model, std::span<const TrainExample> batch);

/// Loss and its exact gradient. Expert selection is held fixed; gradients
/// reach the router through the renormalized weights of the selected experts.
/// `routing` (if given) receives every selected expert index in forward order.
double loss_and_gradient(const MoEModel& model, std::span<const TrainExample> batch,
                         MoEModel& grad, std::vector<int>* routing = nullptr);

/// Plain SGD. Model weights are initialized from tc.seed and batches drawn
/// with a stream derived from it, so a run is bitwise reproducible.
TrainResult train(const ModelConfig& config, const Dataset& train_data, const Dataset& eval_data,
                  const TaskSpec& task, const TrainConfig& tc,
                  const std::function<void(int step, double loss)>& progress = {});

struct GradientCheck {
  double max_relative_error = 0;
  long checked = 0;
  long skipped = 0;  // selection flipped under the probe
};

inline constexpr double kFiniteDifferenceStep = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
inline constexpr double kGradientCheckFloor = 1e-3;

/// Central finite differences against loss_and_gradient() for every
/// parameter on the active routing path: experts never selected by the batch
/// are excluded, as are probes whose +-h step changes any expert selection.
GradientCheck gradient_check(const MoEModel& model, std::span<const TrainExample> batch);

}  // namespace moelab
