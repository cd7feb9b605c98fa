// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moelab/checkpoint.hpp"

#include <string_view>

namespace moelab {

namespace {

constexpr std::string_view kMagic = "MOEM";

std::uint32_t dim(int v) { return static_cast<std::uint32_t>(v); }

int read_dim(ByteReader& r, const char* field) {
  const auto v = r.get_le<std::uint32_t>(field);
  if (v == 0 || v > (1u << 24)) throw FormatError(field, "implausible value " + std::to_string(v));
  return static_cast<int>(v);
}

}  // namespace

Bytes serialize_model(const MoEModel& model) {
  const ModelConfig& c = model.config;
  ByteWriter w;
  w.put_magic(kMagic);
  w.put_u8(kCheckpointVersion);
  for (int v : {c.num_layers, c.num_experts, c.top_k, c.d_model, c.d_ff, c.vocab_size,
                c.max_seq_len})
    w.put_le(dim(v));
  w.put_u8(c.use_shared_expert ? 1 : 0);
  w.put_u8(c.use_attention ? 1 : 0);
  w.put_le(static_cast<std::int32_t>(c.eos_token));
  w.put_le(c.init_scale);
  for (const Tensor* t : parameters(model))
    for (Eigen::Index i = 0; i < t->size(); ++i) w.put_le(t->data()[i]);
  return std::move(w).bytes();
}

MoEModel deserialize_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.get_bytes(4, "magic");
  if (std::string_view(reinterpret_cast<const char*>(magic.data()), 4) != kMagic)
    throw FormatError("magic", "expected \"MOEM\"");
  const auto version = r.get_u8("version");
  if (version != kCheckpointVersion)
    throw FormatError("version", "unsupported version " + std::to_string(version));
  ModelConfig c;
  c.num_layers = read_dim(r, "num_layers");
  c.num_experts = read_dim(r, "num_experts");
  c.top_k = read_dim(r, "top_k");
  c.d_model = read_dim(r, "d_model");
  c.d_ff = read_dim(r, "d_ff");
  c.vocab_size = read_dim(r, "vocab_size");
  c.max_seq_len = read_dim(r, "max_seq_len");
  c.use_shared_expert = r.get_u8("use_shared_expert") != 0;
  c.use_attention = r.get_u8("use_attention") != 0;
  c.eos_token = r.get_le<std::int32_t>("eos_token");
  c.init_scale = r.get_le<double>("init_scale");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError("config", e.what());
  }
  MoEModel m = MoEModel::zeros(c);
  const auto names = parameter_names(c);
  const auto params = parameters(m);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = *params[i];
    const auto raw = r.get_bytes(static_cast<std::size_t>(t.size()) * sizeof(double), names[i].c_str());
    std::memcpy(t.data(), raw.data(), raw.size());
  }
  if (r.remaining() != 0) throw FormatError("trailer", "unexpected bytes after last tensor");
  return m;
}

void save_checkpoint(const MoEModel& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

MoEModel load_checkpoint(const std::filesystem::path& path) {
  return deserialize_model(read_file(path));
}

}  // namespace moelab
