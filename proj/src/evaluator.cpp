// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moelab/evaluator.hpp"

#include <algorithm>

#include "json.hpp"

namespace moelab {

bool FormatSpec::in_alphabet(int token) const {
  return std::find(alphabet.begin(), alphabet.end(), token) != alphabet.end();
}

FormatSpec format_for(const TaskSpec& spec) {
  return {spec.open_tag, spec.close_tag, max_answer_length(spec), answer_alphabet(spec.kind)};
}

ParsedOutput parse_output(std::span<const int> tokens, const FormatSpec& spec) {
  ParsedOutput out;
  const auto is_tag = [&](int t) { return t == spec.open_tag || t == spec.close_tag; };

  if (tokens.size() >= 2 && tokens.front() == spec.open_tag && tokens.back() == spec.close_tag) {
    const auto inner = tokens.subspan(1, tokens.size() - 2);
    if (std::none_of(inner.begin(), inner.end(), is_tag) &&
        static_cast<int>(inner.size()) <= spec.max_answer_length)
      out.strict = std::vector<int>(inner.begin(), inner.end());
  }

  const auto open = std::find(tokens.begin(), tokens.end(), spec.open_tag);
  if (open != tokens.end()) {
    const auto close = std::find(open + 1, tokens.end(), spec.close_tag);
    if (close != tokens.end() && close != open + 1) {
      out.lenient = std::vector<int>(open + 1, close);
      return out;
    }
  }
  auto end = tokens.end();
  while (end != tokens.begin() && !spec.in_alphabet(*(end - 1))) --end;
  auto begin = end;
  while (begin != tokens.begin() && spec.in_alphabet(*(begin - 1))) --begin;
  if (begin != end) out.lenient = std::vector<int>(begin, end);
  return out;
}

EvalOutcome score(const std::vector<std::vector<int>>& outputs,
                  const std::vector<std::vector<int>>& golds, const FormatSpec& spec) {
  if (outputs.size() != golds.size())
    throw InputError("score: " + std::to_string(outputs.size()) + " outputs vs " +
                     std::to_string(golds.size()) + " golds");
  EvalOutcome r;
  r.records.reserve(outputs.size());
  std::size_t strict_hits = 0, lenient_hits = 0, unparseable = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const ParsedOutput p = parse_output(outputs[i], spec);
    SampleRecord rec;
    rec.parseable = p.lenient.has_value();
    rec.content_ok = p.lenient && *p.lenient == golds[i];
    rec.format_ok = p.strict && *p.strict == golds[i];
    strict_hits += rec.format_ok;
    lenient_hits += rec.content_ok;
    unparseable += !rec.parseable;
    r.records.push_back(rec);
  }
  if (!outputs.empty()) {
    const double n = static_cast<double>(outputs.size());
    r.ica = static_cast<double>(strict_hits) / n;
    r.pia = static_cast<double>(lenient_hits) / n;
    r.degenerate = static_cast<double>(unparseable) / n > kDegenerateFraction;
  }
  return r;
}

ModelEvaluation evaluate_model(const MoEModel& model, const Dataset& data, const TaskSpec& task,
                               ActivationLog* recorder) {
  const FormatSpec fmt = format_for(task);
  ModelEvaluation ev;
  std::vector<std::vector<int>> golds;
  ev.outputs.reserve(data.samples.size());
  for (const Sample& s : data.samples) {
    // tags + content + EOS
    const int budget = std::min(fmt.max_answer_length + 3,
                                model.config.max_seq_len - static_cast<int>(s.prompt.size()));
    std::vector<int> out = greedy_decode(model, s.prompt, std::max(budget, 0), recorder);
    if (!out.empty() && out.back() == model.config.eos_token) out.pop_back();
    ev.outputs.push_back(std::move(out));
    golds.push_back(gold_content(s, task));
  }
  ev.outcome = score(ev.outputs, golds, fmt);
  return ev;
}

std::string audit_jsonl(const Dataset& data, const ModelEvaluation& eval) {
  std::string out;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& rec = eval.outcome.records[i];
    nlohmann::ordered_json j{{"prompt", data.samples[i].prompt},
                             {"output", eval.outputs[i]},
                             {"gold", data.samples[i].gold},
                             {"format_ok", rec.format_ok},
                             {"content_ok", rec.content_ok}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace moelab
