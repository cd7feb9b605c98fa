// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Synthetic instruction-style task families. Every answer is emitted as
// OPEN <content...> CLOSE so format compliance and content correctness can
// be scored separately.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace moelab {

namespace vocab {
inline constexpr int kDigit0 = 0;     // 0..9
inline constexpr int kLetterA = 10;   // 10..19 ('a'..'j')
inline constexpr int kNumLetters = 10;
inline constexpr int kPlus = 20;
inline constexpr int kEquals = 21;
inline constexpr int kQuery = 22;
inline constexpr int kLess = 23;
inline constexpr int kGreater = 24;
inline constexpr int kSame = 25;
inline constexpr int kOpen = 28;
inline constexpr int kClose = 29;
inline constexpr int kEos = 30;
inline constexpr int kBos = 31;
inline constexpr int kSize = 32;

/// Human-readable rendering, e.g. "<bos>3+4=" or "[7]".
std::string render(const std::vector<int>& tokens);
/// Inverse of render() for digits, letters and the single-character
/// operators; used by the CLI to accept prompts such as "3+4=".
std::vector<int> parse(std::string_view text);
}  // namespace vocab

enum class TaskKind { kModularSum, kCopyReverse, kComparison };

std::string_view to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view name);

struct TaskSpec {
  TaskKind kind = TaskKind::kModularSum;
  /// Operand range and modulus for modular_sum; operand range for comparison.
  int modulus = 10;
  /// Sequence length for copy_reverse.
  int length = 3;
  int open_tag = vocab::kOpen;
  int close_tag = vocab::kClose;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Tokens that may appear inside the answer tags.
std::vector<int> answer_alphabet(TaskKind kind);
/// Longest possible answer content for the spec.
int max_answer_length(const TaskSpec& spec);

struct Sample {
  std::vector<int> prompt;
  std::vector<int> gold;  // open tag, content, close tag

  friend bool operator==(const Sample&, const Sample&) = default;
};

enum class Split { kTrain, kEval };

struct Dataset {
  std::vector<Sample> samples;
  Split split = Split::kTrain;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

Sample modular_sum_sample(int a, int b, int modulus, const TaskSpec& spec);
Sample copy_reverse_sample(const std::vector<int>& letters, const TaskSpec& spec);
Sample comparison_sample(int a, int b, const TaskSpec& spec);

/// n samples drawn with a stream derived from (spec.seed, split), so train and
/// eval splits are independent draws of the same family.
Dataset generate_dataset(const TaskSpec& spec, int n, Split split = Split::kTrain);

/// Gold content with the tags stripped.
std::vector<int> gold_content(const Sample& sample, const TaskSpec& spec);

/// One JSON object per line: {"prompt":[ids],"gold":[ids]}.
std::string dataset_jsonl(const Dataset& data);
void export_dataset(const Dataset& data, const std::filesystem::path& path);

}  // namespace moelab
