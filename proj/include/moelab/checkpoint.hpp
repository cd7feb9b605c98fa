// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Checkpoint container (all integers and floats little-endian):
//
//   offset  size  field
//   0       4     magic "MOEM"
//   4       1     format version (1)
//   5       4     u32 num_layers
//   9       4     u32 num_experts
//   13      4     u32 top_k
//   17      4     u32 d_model
//   21      4     u32 d_ff
//   25      4     u32 vocab_size
//   29      4     u32 max_seq_len
//   33      1     u8  use_shared_expert
//   34      1     u8  use_attention
//   35      4     i32 eos_token (-1 = none)
//   39      8     f64 init_scale
//   47      ...   every tensor from parameters() in order, row-major f64
//
// Tensor shapes follow from the config, so no per-tensor header is stored.

#pragma once

#include <filesystem>

#include "moelab/format.hpp"
#include "moelab/model.hpp"

namespace moelab {

inline constexpr std::uint8_t kCheckpointVersion = 1;

Bytes serialize_model(const MoEModel& model);
MoEModel deserialize_model(std::span<const std::uint8_t> bytes);

void save_checkpoint(const MoEModel& model, const std::filesystem::path& path);
MoEModel load_checkpoint(const std::filesystem::path& path);

}  // namespace moelab
