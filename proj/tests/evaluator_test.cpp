// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "json.hpp"
#include "moelab/evaluator.hpp"
#include "moelab/rng.hpp"

namespace moelab {
namespace {

constexpr int O = vocab::kOpen;
constexpr int C = vocab::kClose;

FormatSpec digits_spec() {
  TaskSpec t;
  t.modulus = 100;
  return format_for(t);
}

using Tokens = std::vector<int>;

TEST(ParseOutput, WellFormed) {
  const ParsedOutput p = parse_output(Tokens{O, 4, 2, C}, digits_spec());
  EXPECT_EQ(p.strict, (Tokens{4, 2}));
  EXPECT_EQ(p.lenient, (Tokens{4, 2}));
}

TEST(ParseOutput, MissingTags) {
  const ParsedOutput p = parse_output(Tokens{4, 2}, digits_spec());
  EXPECT_FALSE(p.strict);
  EXPECT_EQ(p.lenient, (Tokens{4, 2}));
}

TEST(ParseOutput, TrailingJunk) {
  const ParsedOutput p = parse_output(Tokens{O, 4, C, 7}, digits_spec());
  EXPECT_FALSE(p.strict);
  EXPECT_EQ(p.lenient, Tokens{4});
}

TEST(ParseOutput, OverlongContentIsNotStrict) {
  const ParsedOutput p = parse_output(Tokens{O, 1, 2, 3, C}, digits_spec());
  EXPECT_FALSE(p.strict);
  EXPECT_EQ(p.lenient, (Tokens{1, 2, 3}));
}

TEST(ParseOutput, LenientFallsBackToLastAlphabetRun) {
  const ParsedOutput p = parse_output(Tokens{1, vocab::kPlus, 5, 6, vocab::kEquals}, digits_spec());
  EXPECT_EQ(p.lenient, (Tokens{5, 6}));
  EXPECT_FALSE(parse_output(Tokens{O, C}, digits_spec()).lenient);
  EXPECT_FALSE(parse_output(Tokens{}, digits_spec()).lenient);
}

TEST(Score, PerfectOutputs) {
  const EvalOutcome r = score({{O, 3, C}, {O, 9, C}}, {{3}, {9}}, digits_spec());
  EXPECT_EQ(r.ica, 1.0);
  EXPECT_EQ(r.pia, 1.0);
  EXPECT_FALSE(r.degenerate);
}

TEST(Score, ContentWithoutFormat) {
  const EvalOutcome r = score({{3}, {9}}, {{3}, {9}}, digits_spec());
  EXPECT_EQ(r.ica, 0.0);
  EXPECT_EQ(r.pia, 1.0);
}

TEST(Score, CountingOracle) {
  const EvalOutcome r = score({{O, 1, C}, {O, 2, C}, {3}, {O, 5, C}}, {{1}, {2}, {3}, {4}}, digits_spec());
  EXPECT_EQ(r.ica, 0.5);
  EXPECT_EQ(r.pia, 0.75);
  EXPECT_TRUE(r.records[0].format_ok && r.records[0].content_ok);
  EXPECT_FALSE(r.records[2].format_ok);
  EXPECT_TRUE(r.records[2].content_ok);
  EXPECT_FALSE(r.records[3].content_ok);
}

TEST(Score, FormattedButWrongCountsForNeither) {
  const EvalOutcome r = score({{O, 8, C}}, {{7}}, digits_spec());
  EXPECT_EQ(r.ica, 0.0);
  EXPECT_EQ(r.pia, 0.0);
}

TEST(Score, LengthMismatchThrows) {
  EXPECT_THROW(score({{1}}, {}, digits_spec()), InputError);
}

TEST(Score, DegenerateWhenNothingParses) {
  const std::vector<Tokens> outputs(10, Tokens{vocab::kEquals});
  const EvalOutcome r = score(outputs, std::vector<Tokens>(10, Tokens{1}), digits_spec());
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.ica, 0.0);
  EXPECT_EQ(r.pia, 0.0);
  std::vector<Tokens> mostly(outputs);
  mostly[0] = {1};
  EXPECT_FALSE(score(mostly, std::vector<Tokens>(10, Tokens{1}), digits_spec()).degenerate);
}

TEST(Score, IcaNeverExceedsPiaAndPermutationInvariant) {
  RngStream rng(14);
  const FormatSpec spec = digits_spec();
  const int pool[] = {O, C, 0, 1, 2, 3, vocab::kPlus};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Tokens> outputs(12), golds(12);
    for (int i = 0; i < 12; ++i) {
      const int len = static_cast<int>(rng.next_below(5));
      for (int t = 0; t < len; ++t) outputs[static_cast<std::size_t>(i)].push_back(pool[rng.next_below(7)]);
      golds[static_cast<std::size_t>(i)] = {static_cast<int>(rng.next_below(4))};
    }
    const EvalOutcome r = score(outputs, golds, spec);
    EXPECT_LE(r.ica, r.pia);
    EXPECT_GE(r.ica, 0.0);
    EXPECT_LE(r.pia, 1.0);
    std::reverse(outputs.begin(), outputs.end());
    std::reverse(golds.begin(), golds.end());
    const EvalOutcome p = score(outputs, golds, spec);
    EXPECT_EQ(p.ica, r.ica);
    EXPECT_EQ(p.pia, r.pia);
    EXPECT_EQ(p.records.front().content_ok, r.records.back().content_ok);
  }
}

TEST(EvaluateModel, AuditTrailHasOneRecordPerSample) {
  ModelConfig c;
  c.num_layers = 1;
  c.d_model = 8;
  c.d_ff = 8;
  c.eos_token = vocab::kEos;
  const MoEModel m = MoEModel::initialize(c, 1);
  TaskSpec task;
  const Dataset d = generate_dataset(task, 5, Split::kEval);
  ActivationLog log(1, c.num_experts);
  const ModelEvaluation ev = evaluate_model(m, d, task, &log);
  EXPECT_EQ(ev.outputs.size(), 5u);
  EXPECT_GT(log.tokens_processed(), 0);
  for (const Tokens& out : ev.outputs) EXPECT_LE(static_cast<int>(out.size()), max_answer_length(task) + 3);
  const std::string audit = audit_jsonl(d, ev);
  EXPECT_EQ(std::count(audit.begin(), audit.end(), '\n'), 5);
  const auto first = nlohmann::json::parse(audit.substr(0, audit.find('\n')));
  EXPECT_EQ(first["prompt"].get<Tokens>(), d.samples[0].prompt);
  EXPECT_TRUE(first.contains("format_ok"));
  EXPECT_TRUE(first.contains("content_ok"));
}

}  // namespace
}  // namespace moelab
