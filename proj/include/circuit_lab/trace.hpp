// Copyright 2026 The Circuit Lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Captured internals of forward passes.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "circuit_lab/tensor.hpp"

namespace circuit_lab {

enum class TracePositions { kAll, kLastOnly };

struct TraceConfig {
  bool capture_attention = true;
  bool capture_mlp_hidden = true;
  bool capture_residual = false;
  TracePositions positions = TracePositions::kAll;

  void validate() const;
  bool operator==(const TraceConfig&) const = default;
};

// Per-example capture. Attention is stored as [layer][head][row][key] where
// row r is query position first_query() + r and keys span the full sequence
// (future keys hold exact zeros). MLP hidden values are post-GELU.
struct ForwardTrace {
  std::string example_id;
  int n_layers = 0;
  int n_heads = 0;
  int d_model = 0;
  int d_mlp = 0;
  int token_count = 0;
  int query_rows = 0;
  std::vector<double> attention;
  std::vector<double> mlp_hidden;
  std::vector<double> residual;

  int first_query() const { return token_count - query_rows; }

  std::span<const double> attention_row(int layer, int head, int row) const {
    const std::size_t T = static_cast<std::size_t>(token_count);
    const std::size_t at =
        ((static_cast<std::size_t>(layer) * n_heads + head) * query_rows + row) * T;
    return {attention.data() + at, T};
  }
  std::span<const double> mlp_row(int layer, int row) const {
    const std::size_t at =
        (static_cast<std::size_t>(layer) * query_rows + row) * d_mlp;
    return {mlp_hidden.data() + at, static_cast<std::size_t>(d_mlp)};
  }
  std::span<const double> residual_row(int layer, int row) const {
    const std::size_t at =
        (static_cast<std::size_t>(layer) * query_rows + row) * d_model;
    return {residual.data() + at, static_cast<std::size_t>(d_model)};
  }

  bool operator==(const ForwardTrace&) const = default;
};

struct TraceSet {
  std::string model_tag;
  int n_layers = 0;
  int n_heads = 0;
  int d_model = 0;
  int d_mlp = 0;
  TraceConfig config;
  std::uint64_t fingerprint = 0;
  std::vector<ForwardTrace> traces;

  // Throws ComparisonError unless `other` saw the same inputs through a model
  // of the same shape.
  void check_comparable(const TraceSet& other) const;

  bool operator==(const TraceSet&) const = default;
};

// FNV-1a over sequence lengths and token ids.
std::uint64_t fingerprint_sequences(
    const std::vector<std::vector<TokenId>>& sequences);

// "MICLTRC1" file: u32 version, u32-prefixed JSON header, u32 trace count,
// then per trace: u16-prefixed id, u32 token count, u32 query rows, u8 capture
// flags (bit0 attention, bit1 mlp, bit2 residual), and the captured blocks as
// raw 64-bit floats in that order.
void save_traces(const TraceSet& set, const std::filesystem::path& path);
TraceSet load_traces(const std::filesystem::path& path);

inline constexpr std::uint32_t kTraceFormatVersion = 1;

}  // namespace circuit_lab
