// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Dual-metric scoring. ICA counts an output only when it is exactly
// OPEN <gold content> CLOSE; PIA counts any output whose recoverable answer
// equals the gold content. A strict hit is always a lenient hit, so
// ICA <= PIA on every dataset.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moelab/model.hpp"
#include "moelab/tasks.hpp"

namespace moelab {

struct FormatSpec {
  int open_tag = vocab::kOpen;
  int close_tag = vocab::kClose;
  int max_answer_length = 1;
  std::vector<int> alphabet;

  bool in_alphabet(int token) const;
};

FormatSpec format_for(const TaskSpec& spec);

struct ParsedOutput {
  std::optional<std::vector<int>> strict;
  std::optional<std::vector<int>> lenient;
};

/// strict: the output is exactly one tag pair around at most
/// max_answer_length tokens, nothing before or after it.
/// lenient: content of the first OPEN...CLOSE pair if it is non-empty,
/// otherwise the last maximal run of answer-alphabet tokens.
ParsedOutput parse_output(std::span<const int> tokens, const FormatSpec& spec);

struct SampleRecord {
  bool format_ok = false;
  bool content_ok = false;
  bool parseable = false;  // lenient content was found
};

struct EvalOutcome {
  std::vector<SampleRecord> records;
  double ica = 0;
  double pia = 0;
  /// More than 90% of outputs had no recoverable answer.
  bool degenerate = false;
};

inline constexpr double kDegenerateFraction = 0.9;

/// `golds` hold answer content only (tags stripped).
EvalOutcome score(const std::vector<std::vector<int>>& outputs,
                  const std::vector<std::vector<int>>& golds, const FormatSpec& spec);

struct ModelEvaluation {
  EvalOutcome outcome;
  std::vector<std::vector<int>> outputs;  // generated tokens, trailing EOS removed
};

/// Greedy-decodes every prompt and scores it. Activations of every processed
/// token are accumulated into `recorder` when given.
ModelEvaluation evaluate_model(const MoEModel& model, const Dataset& data, const TaskSpec& task,
                               ActivationLog* recorder = nullptr);

/// Per-sample audit lines {prompt, output, gold, format_ok, content_ok}.
std::string audit_jsonl(const Dataset& data, const ModelEvaluation& eval);

}  // namespace moelab
