// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moelab/tasks.hpp"

#include "json.hpp"
#include "moelab/errors.hpp"
#include "moelab/format.hpp"
#include "moelab/rng.hpp"

namespace moelab {

namespace vocab {

std::string render(const std::vector<int>& tokens) {
  std::string s;
  for (int t : tokens) {
    if (t >= kDigit0 && t < kDigit0 + 10) s += static_cast<char>('0' + t - kDigit0);
    else if (t >= kLetterA && t < kLetterA + kNumLetters) s += static_cast<char>('a' + t - kLetterA);
    else if (t == kPlus) s += '+';
    else if (t == kEquals) s += '=';
    else if (t == kQuery) s += '?';
    else if (t == kLess) s += '<';
    else if (t == kGreater) s += '>';
    else if (t == kSame) s += '~';
    else if (t == kOpen) s += '[';
    else if (t == kClose) s += ']';
    else if (t == kEos) s += "<eos>";
    else if (t == kBos) s += "<bos>";
    else s += "<" + std::to_string(t) + ">";
  }
  return s;
}

std::vector<int> parse(std::string_view text) {
  std::vector<int> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (text.substr(i).starts_with("<bos>")) {
      out.push_back(kBos);
      i += 4;
    } else if (text.substr(i).starts_with("<eos>")) {
      out.push_back(kEos);
      i += 4;
    } else if (ch >= '0' && ch <= '9') out.push_back(kDigit0 + (ch - '0'));
    else if (ch >= 'a' && ch < 'a' + kNumLetters) out.push_back(kLetterA + (ch - 'a'));
    else if (ch == '+') out.push_back(kPlus);
    else if (ch == '=') out.push_back(kEquals);
    else if (ch == '?') out.push_back(kQuery);
    else if (ch == '<') out.push_back(kLess);
    else if (ch == '>') out.push_back(kGreater);
    else if (ch == '~') out.push_back(kSame);
    else if (ch == '[') out.push_back(kOpen);
    else if (ch == ']') out.push_back(kClose);
    else if (ch == ' ') continue;
    else throw InputError(std::string("unknown prompt character '") + ch + "'");
  }
  return out;
}

}  // namespace vocab

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kModularSum: return "modular_sum";
    case TaskKind::kCopyReverse: return "copy_reverse";
    case TaskKind::kComparison: return "comparison";
  }
  return "?";
}

TaskKind task_kind_from_string(std::string_view name) {
  if (name == "modular_sum") return TaskKind::kModularSum;
  if (name == "copy_reverse") return TaskKind::kCopyReverse;
  if (name == "comparison") return TaskKind::kComparison;
  throw ConfigError("unknown task kind \"" + std::string(name) + "\"");
}

namespace {

constexpr int kMaxModulus = 100;
constexpr int kMaxCopyLength = 12;

bool is_data_token(int t) { return t >= 0 && t < vocab::kOpen; }

void push_number(std::vector<int>& out, int v) {
  if (v >= 10) out.push_back(vocab::kDigit0 + v / 10);
  out.push_back(vocab::kDigit0 + v % 10);
}

Sample wrap(std::vector<int> prompt, const std::vector<int>& content, const TaskSpec& spec) {
  Sample s{std::move(prompt), {spec.open_tag}};
  s.gold.insert(s.gold.end(), content.begin(), content.end());
  s.gold.push_back(spec.close_tag);
  return s;
}

}  // namespace

void TaskSpec::validate() const {
  if (open_tag == close_tag) throw ConfigError("TaskSpec: open and close tags must differ");
  for (int tag : {open_tag, close_tag})
    if (is_data_token(tag) || tag >= vocab::kSize || tag == vocab::kEos || tag == vocab::kBos)
      throw ConfigError("TaskSpec: format tags must be reserved ids outside the data alphabet");
  switch (kind) {
    case TaskKind::kModularSum:
    case TaskKind::kComparison:
      if (modulus < 2 || modulus > kMaxModulus)
        throw ConfigError("TaskSpec: modulus must lie in [2, 100] (two-digit answers)");
      break;
    case TaskKind::kCopyReverse:
      if (length < 1 || length > kMaxCopyLength)
        throw ConfigError("TaskSpec: copy_reverse length must lie in [1, 12]");
      break;
  }
}

std::vector<int> answer_alphabet(TaskKind kind) {
  std::vector<int> a;
  switch (kind) {
    case TaskKind::kModularSum:
      for (int i = 0; i < 10; ++i) a.push_back(vocab::kDigit0 + i);
      break;
    case TaskKind::kCopyReverse:
      for (int i = 0; i < vocab::kNumLetters; ++i) a.push_back(vocab::kLetterA + i);
      break;
    case TaskKind::kComparison:
      a = {vocab::kLess, vocab::kGreater, vocab::kSame};
      break;
  }
  return a;
}

int max_answer_length(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::kModularSum: return spec.modulus > 10 ? 2 : 1;
    case TaskKind::kCopyReverse: return spec.length;
    case TaskKind::kComparison: return 1;
  }
  return 0;
}

Sample modular_sum_sample(int a, int b, int modulus, const TaskSpec& spec) {
  std::vector<int> prompt{vocab::kBos};
  push_number(prompt, a);
  prompt.push_back(vocab::kPlus);
  push_number(prompt, b);
  prompt.push_back(vocab::kEquals);
  std::vector<int> content;
  push_number(content, (a + b) % modulus);
  return wrap(std::move(prompt), content, spec);
}

Sample copy_reverse_sample(const std::vector<int>& letters, const TaskSpec& spec) {
  std::vector<int> prompt{vocab::kBos};
  prompt.insert(prompt.end(), letters.begin(), letters.end());
  prompt.push_back(vocab::kEquals);
  return wrap(std::move(prompt), std::vector<int>(letters.rbegin(), letters.rend()), spec);
}

Sample comparison_sample(int a, int b, const TaskSpec& spec) {
  std::vector<int> prompt{vocab::kBos};
  push_number(prompt, a);
  prompt.push_back(vocab::kQuery);
  push_number(prompt, b);
  prompt.push_back(vocab::kEquals);
  const int answer = a < b ? vocab::kLess : (a > b ? vocab::kGreater : vocab::kSame);
  return wrap(std::move(prompt), {answer}, spec);
}

Dataset generate_dataset(const TaskSpec& spec, int n, Split split) {
  spec.validate();
  if (n < 1) throw ConfigError("generate_dataset: n must be >= 1");
  RngStream rng(derive_seed(spec.seed, split == Split::kTrain ? 0 : 1));
  Dataset d{{}, split};
  d.samples.reserve(static_cast<std::size_t>(n));
  const auto m = static_cast<std::uint64_t>(spec.modulus);
  for (int i = 0; i < n; ++i) {
    switch (spec.kind) {
      case TaskKind::kModularSum: {
        const int a = static_cast<int>(rng.next_below(m));
        const int b = static_cast<int>(rng.next_below(m));
        d.samples.push_back(modular_sum_sample(a, b, spec.modulus, spec));
        break;
      }
      case TaskKind::kCopyReverse: {
        std::vector<int> letters;
        for (int j = 0; j < spec.length; ++j)
          letters.push_back(vocab::kLetterA + static_cast<int>(rng.next_below(vocab::kNumLetters)));
        d.samples.push_back(copy_reverse_sample(letters, spec));
        break;
      }
      case TaskKind::kComparison: {
        const int a = static_cast<int>(rng.next_below(m));
        const int b = static_cast<int>(rng.next_below(m));
        d.samples.push_back(comparison_sample(a, b, spec));
        break;
      }
    }
  }
  return d;
}

std::vector<int> gold_content(const Sample& sample, const TaskSpec& spec) {
  if (sample.gold.size() < 2 || sample.gold.front() != spec.open_tag ||
      sample.gold.back() != spec.close_tag)
    throw InputError("gold answer is not wrapped in the format tags");
  return {sample.gold.begin() + 1, sample.gold.end() - 1};
}

std::string dataset_jsonl(const Dataset& data) {
  std::string out;
  for (const Sample& s : data.samples) {
    nlohmann::ordered_json j{{"prompt", s.prompt}, {"gold", s.gold}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

void export_dataset(const Dataset& data, const std::filesystem::path& path) {
  write_text_file(path, dataset_jsonl(data));
}

}  // namespace moelab
