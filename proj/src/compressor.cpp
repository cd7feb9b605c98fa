// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moelab/compressor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <queue>
#include <string_view>

namespace moelab {

namespace {

constexpr std::string_view kMelcMagic = "MELC";
constexpr std::string_view kQuantMagic = "MEUQ";
constexpr std::uint32_t kEscape = 2 * kMaxBinIndex + 1;
constexpr std::uint32_t kRunBase = kEscape + 1;
constexpr int kMaxRunBit = 63;
constexpr int kMaxCodeLength = 32;

bool is_run(std::uint32_t s) { return s >= kRunBase && s <= kRunBase + kMaxRunBit; }

// Huffman code lengths for the given frequencies. Frequencies are halved and
// the tree rebuilt until no code exceeds kMaxCodeLength.
std::map<std::uint32_t, std::uint8_t> code_lengths(std::map<std::uint32_t, std::uint64_t> freq) {
  std::map<std::uint32_t, std::uint8_t> lengths;
  if (freq.size() == 1) {
    lengths[freq.begin()->first] = 1;
    return lengths;
  }
  for (;;) {
    struct Node {
      std::uint64_t weight;
      std::uint32_t order;  // deterministic tie-break
      int left, right;
      std::uint32_t symbol;
    };
    std::vector<Node> nodes;
    using Item = std::pair<std::pair<std::uint64_t, std::uint32_t>, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    for (const auto& [sym, f] : freq) {
      nodes.push_back({f, static_cast<std::uint32_t>(nodes.size()), -1, -1, sym});
      heap.push({{f, nodes.back().order}, static_cast<int>(nodes.size()) - 1});
    }
    while (heap.size() > 1) {
      const auto a = heap.top();
      heap.pop();
      const auto b = heap.top();
      heap.pop();
      const auto order = static_cast<std::uint32_t>(nodes.size());
      nodes.push_back({a.first.first + b.first.first, order, a.second, b.second, 0});
      heap.push({{nodes.back().weight, order}, static_cast<int>(nodes.size()) - 1});
    }
    lengths.clear();
    int deepest = 0;
    std::vector<std::pair<int, int>> stack{{heap.top().second, 0}};
    while (!stack.empty()) {
      const auto [idx, depth] = stack.back();
      stack.pop_back();
      const Node& n = nodes[static_cast<std::size_t>(idx)];
      if (n.left < 0) {
        lengths[n.symbol] = static_cast<std::uint8_t>(depth);
        deepest = std::max(deepest, depth);
      } else {
        stack.push_back({n.left, depth + 1});
        stack.push_back({n.right, depth + 1});
      }
    }
    if (deepest <= kMaxCodeLength) return lengths;
    for (auto& [sym, f] : freq) f = (f + 1) / 2;
  }
}

// Canonical codes: sorted by (length, symbol), consecutive integers.
struct Canonical {
  std::vector<CodeEntry> table;                  // sorted canonical order
  std::map<std::uint32_t, std::pair<std::uint64_t, int>> encode;  // symbol -> (code, length)
};

Canonical canonical_from_table(std::vector<CodeEntry> table) {
  std::sort(table.begin(), table.end(), [](const CodeEntry& a, const CodeEntry& b) {
    return a.length < b.length || (a.length == b.length && a.symbol < b.symbol);
  });
  Canonical c;
  std::uint64_t code = 0;
  int prev_len = table.empty() ? 0 : table.front().length;
  for (const CodeEntry& e : table) {
    code <<= (e.length - prev_len);
    prev_len = e.length;
    c.encode[e.symbol] = {code, e.length};
    ++code;
  }
  c.table = std::move(table);
  return c;
}

class BitWriter {
 public:
  void put(std::uint64_t code, int length) {
    for (int i = length - 1; i >= 0; --i) {
      if (bits_ % 8 == 0) bytes_.push_back(0);
      if ((code >> i) & 1u) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
      ++bits_;
    }
  }
  std::uint64_t bits() const { return bits_; }
  Bytes take() { return std::move(bytes_); }

 private:
  Bytes bytes_;
  std::uint64_t bits_ = 0;
};

void emit_zero_run(std::uint64_t run, std::vector<std::uint32_t>& symbols) {
  for (int k = 0; run != 0; ++k, run >>= 1)
    if (run & 1u) symbols.push_back(kRunBase + static_cast<std::uint32_t>(k));
}

}  // namespace

CompressedBlock compress_eb(std::span<const double> x, double error_bound) {
  if (!(error_bound > 0) || !std::isfinite(error_bound))
    throw DomainError("compress_eb: error bound must be a positive finite number");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]))
      throw InputError("compress_eb: non-finite value at index " + std::to_string(i));

  CompressedBlock b;
  b.count = x.size();
  b.error_bound = error_bound;
  const double step = 2.0 * error_bound;

  std::vector<std::uint32_t> symbols;
  std::uint64_t zero_run = 0;
  double pred = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double q = (x[i] - pred) / step;
    bool coded = false;
    if (std::abs(q) < kMaxBinIndex + 0.5) {
      const auto code = static_cast<std::int64_t>(std::llround(q));
      const double recon = pred + step * static_cast<double>(code);
      if (std::isfinite(recon) && std::abs(x[i] - recon) <= error_bound) {
        coded = true;
        pred = recon;
        if (code == 0) {
          ++zero_run;
        } else {
          emit_zero_run(zero_run, symbols);
          zero_run = 0;
          symbols.push_back(static_cast<std::uint32_t>(code + kMaxBinIndex));
        }
      }
    }
    if (!coded) {
      emit_zero_run(zero_run, symbols);
      zero_run = 0;
      symbols.push_back(kEscape);
      b.outlier_index.push_back(i);
      b.outlier_value.push_back(x[i]);
      pred = x[i];
    }
  }
  emit_zero_run(zero_run, symbols);

  if (symbols.empty()) return b;
  std::map<std::uint32_t, std::uint64_t> freq;
  for (auto s : symbols) ++freq[s];
  std::vector<CodeEntry> table;
  for (const auto& [sym, len] : code_lengths(freq)) table.push_back({sym, len});
  const Canonical canon = canonical_from_table(std::move(table));
  BitWriter w;
  for (auto s : symbols) {
    const auto& [code, len] = canon.encode.at(s);
    w.put(code, len);
  }
  b.table = canon.table;
  b.bit_count = w.bits();
  b.stream = w.take();
  return b;
}

std::vector<double> decompress_eb(const CompressedBlock& b) {
  if (b.predictor != kPredictorLorenzo1)
    throw FormatError("predictor", "unknown predictor id " + std::to_string(b.predictor));
  if (!(b.error_bound > 0) || !std::isfinite(b.error_bound))
    throw FormatError("error_bound", "must be a positive finite number");
  if (b.outlier_index.size() != b.outlier_value.size())
    throw FormatError("outliers", "index/value count mismatch");
  if (b.stream.size() * 8 < b.bit_count) throw FormatError("stream", "truncated bit stream");

  // Canonical decode tables indexed by code length.
  std::vector<CodeEntry> table = b.table;
  for (const CodeEntry& e : table)
    if (e.length == 0 || e.length > kMaxCodeLength)
      throw FormatError("table", "code length " + std::to_string(e.length) + " out of range");
  const Canonical canon = canonical_from_table(table);
  std::vector<std::uint64_t> first(kMaxCodeLength + 2, 0), count(kMaxCodeLength + 2, 0),
      offset(kMaxCodeLength + 2, 0);
  for (const CodeEntry& e : canon.table) ++count[e.length];
  {
    std::uint64_t code = 0, idx = 0;
    for (int len = 1; len <= kMaxCodeLength; ++len) {
      code = (code + count[static_cast<std::size_t>(len - 1)]) << 1;
      if (len == 1) code = 0;
      first[static_cast<std::size_t>(len)] = code;
      offset[static_cast<std::size_t>(len)] = idx;
      idx += count[static_cast<std::size_t>(len)];
    }
  }

  std::vector<double> out;
  out.reserve(b.count);
  const double step = 2.0 * b.error_bound;
  double pred = 0.0;
  std::size_t next_outlier = 0;
  std::uint64_t pos = 0;
  auto read_bit = [&]() -> std::uint64_t {
    if (pos >= b.bit_count) throw FormatError("stream", "ran out of bits");
    const std::uint64_t bit = (b.stream[pos / 8] >> (7 - pos % 8)) & 1u;
    ++pos;
    return bit;
  };
  while (out.size() < b.count) {
    std::uint64_t code = 0;
    std::uint32_t sym = 0;
    bool found = false;
    for (int len = 1; len <= kMaxCodeLength; ++len) {
      code = (code << 1) | read_bit();
      const auto L = static_cast<std::size_t>(len);
      if (count[L] && code >= first[L] && code - first[L] < count[L]) {
        sym = canon.table[offset[L] + (code - first[L])].symbol;
        found = true;
        break;
      }
    }
    if (!found) throw FormatError("stream", "invalid prefix code");
    if (sym == kEscape) {
      if (next_outlier >= b.outlier_index.size() || b.outlier_index[next_outlier] != out.size())
        throw FormatError("outliers", "escape does not match the outlier index list");
      pred = b.outlier_value[next_outlier++];
      out.push_back(pred);
    } else if (is_run(sym)) {
      const std::uint64_t run = std::uint64_t{1} << (sym - kRunBase);
      if (run > b.count - out.size()) throw FormatError("stream", "zero run past element count");
      for (std::uint64_t i = 0; i < run; ++i) {
        pred = pred + step * 0.0;
        out.push_back(pred);
      }
    } else if (sym < kEscape) {
      const auto bin = static_cast<std::int64_t>(sym) - kMaxBinIndex;
      pred = pred + step * static_cast<double>(bin);
      out.push_back(pred);
    } else {
      throw FormatError("table", "symbol " + std::to_string(sym) + " out of range");
    }
  }
  if (next_outlier != b.outlier_index.size())
    throw FormatError("outliers", "unused outlier entries");
  return out;
}

Bytes serialize(const CompressedBlock& b) {
  ByteWriter w;
  w.put_magic(kMelcMagic);
  w.put_u8(kMelcVersion);
  w.put_le<std::uint64_t>(b.count);
  w.put_le<double>(b.error_bound);
  w.put_u8(b.predictor);
  w.put_le<std::uint32_t>(static_cast<std::uint32_t>(b.table.size()));
  for (const CodeEntry& e : b.table) {
    w.put_le<std::uint32_t>(e.symbol);
    w.put_u8(e.length);
  }
  w.put_le<std::uint64_t>(b.bit_count);
  w.put_bytes(b.stream);
  w.put_le<std::uint64_t>(b.outlier_index.size());
  for (auto i : b.outlier_index) w.put_le<std::uint64_t>(i);
  for (auto v : b.outlier_value) w.put_le<double>(v);
  return std::move(w).bytes();
}

CompressedBlock parse_compressed(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.get_bytes(4, "magic");
  if (std::string_view(reinterpret_cast<const char*>(magic.data()), 4) != kMelcMagic)
    throw FormatError("magic", "expected \"MELC\"");
  const auto version = r.get_u8("version");
  if (version != kMelcVersion)
    throw FormatError("version", "unsupported version " + std::to_string(version));
  CompressedBlock b;
  b.count = r.get_le<std::uint64_t>("count");
  b.error_bound = r.get_le<double>("error_bound");
  b.predictor = r.get_u8("predictor");
  if (b.predictor != kPredictorLorenzo1)
    throw FormatError("predictor", "unknown predictor id " + std::to_string(b.predictor));
  const auto table_size = r.get_le<std::uint32_t>("table_size");
  if (static_cast<std::uint64_t>(table_size) * 5 > r.remaining())
    throw FormatError("table", "truncated input");
  for (std::uint32_t i = 0; i < table_size; ++i) {
    CodeEntry e;
    e.symbol = r.get_le<std::uint32_t>("table.symbol");
    e.length = r.get_u8("table.length");
    b.table.push_back(e);
  }
  b.bit_count = r.get_le<std::uint64_t>("bit_count");
  const std::uint64_t stream_bytes = (b.bit_count + 7) / 8;
  if (stream_bytes > r.remaining()) throw FormatError("stream", "truncated input");
  const auto stream = r.get_bytes(static_cast<std::size_t>(stream_bytes), "stream");
  b.stream.assign(stream.begin(), stream.end());
  const auto outliers = r.get_le<std::uint64_t>("outlier_count");
  if (outliers > r.remaining() / 16) throw FormatError("outliers", "truncated input");
  for (std::uint64_t i = 0; i < outliers; ++i) b.outlier_index.push_back(r.get_le<std::uint64_t>("outlier_index"));
  for (std::uint64_t i = 0; i < outliers; ++i) b.outlier_value.push_back(r.get_le<double>("outlier_value"));
  if (r.remaining() != 0) throw FormatError("trailer", "unexpected bytes after outliers");
  return b;
}

QuantizedBlock quantize_uniform(std::span<const double> x, int bits) {
  if (bits != 2 && bits != 3 && bits != 4 && bits != 8)
    throw DomainError("quantize_uniform: unsupported bit width " + std::to_string(bits));
  QuantizedBlock q;
  q.bits = bits;
  q.count = x.size();
  if (x.empty()) return q;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i])) throw InputError("quantize_uniform: non-finite input");
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  q.min = *lo;
  q.max = *hi;
  const std::uint32_t levels = (1u << bits) - 1;
  const double range = q.max - q.min;
  q.packed.assign((x.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
  std::size_t bitpos = 0;
  for (double v : x) {
    std::uint32_t code = 0;
    if (range > 0) {
      const double t = (v - q.min) / range * levels;
      code = static_cast<std::uint32_t>(std::clamp(std::llround(t), 0LL, static_cast<long long>(levels)));
    }
    for (int k = 0; k < bits; ++k, ++bitpos)
      if ((code >> k) & 1u) q.packed[bitpos / 8] |= static_cast<std::uint8_t>(1u << (bitpos % 8));
  }
  return q;
}

std::vector<std::uint32_t> quantized_codes(const QuantizedBlock& q) {
  std::vector<std::uint32_t> codes(q.count, 0);
  std::size_t bitpos = 0;
  for (auto& c : codes)
    for (int k = 0; k < q.bits; ++k, ++bitpos)
      if ((q.packed[bitpos / 8] >> (bitpos % 8)) & 1u) c |= 1u << k;
  return codes;
}

std::vector<double> dequantize_uniform(const QuantizedBlock& q) {
  const std::uint32_t levels = (1u << q.bits) - 1;
  const double range = q.max - q.min;
  std::vector<double> out;
  out.reserve(q.count);
  for (std::uint32_t c : quantized_codes(q)) {
    if (c == levels) {
      out.push_back(q.max);
      continue;
    }
    const double v = q.min + (static_cast<double>(c) * range) / levels;
    out.push_back(std::clamp(v, q.min, q.max));
  }
  return out;
}

Bytes serialize(const QuantizedBlock& q) {
  ByteWriter w;
  w.put_magic(kQuantMagic);
  w.put_u8(static_cast<std::uint8_t>(q.bits));
  w.put_le<std::uint64_t>(q.count);
  w.put_le<double>(q.min);
  w.put_le<double>(q.max);
  w.put_bytes(q.packed);
  return std::move(w).bytes();
}

double ratio(const CompressedBlock& block, std::span<const double> original) {
  return static_cast<double>(original.size() * sizeof(double)) /
         static_cast<double>(serialize(block).size());
}

double ratio(const QuantizedBlock& block, std::span<const double> original) {
  return static_cast<double>(original.size() * sizeof(double)) /
         static_cast<double>(serialize(block).size());
}

}  // namespace moelab
