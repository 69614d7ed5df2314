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

#include "circuit_lab/trace.hpp"

#include "json.hpp"

#include "circuit_lab/binary_io.hpp"
#include "circuit_lab/error.hpp"

namespace circuit_lab {

void TraceConfig::validate() const {
  if (!capture_attention && !capture_mlp_hidden && !capture_residual) {
    throw ConfigError("trace config captures nothing");
  }
}

void TraceSet::check_comparable(const TraceSet& other) const {
  if (fingerprint != other.fingerprint) {
    throw ComparisonError("trace sets '" + model_tag + "' and '" +
                          other.model_tag + "' were captured on different corpora");
  }
  if (n_layers != other.n_layers || n_heads != other.n_heads ||
      d_model != other.d_model || d_mlp != other.d_mlp) {
    throw ComparisonError("trace sets '" + model_tag + "' and '" +
                          other.model_tag + "' come from different model shapes");
  }
  if (traces.size() != other.traces.size()) {
    throw ComparisonError("trace sets differ in example count");
  }
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (traces[i].token_count != other.traces[i].token_count ||
        traces[i].query_rows != other.traces[i].query_rows) {
      throw ComparisonError("trace " + std::to_string(i) +
                            " differs in length between the two sets");
    }
  }
}

std::uint64_t fingerprint_sequences(
    const std::vector<std::vector<TokenId>>& sequences) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ull;
    }
  };
  mix(sequences.size());
  for (const auto& s : sequences) {
    mix(s.size());
    for (TokenId t : s) mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)));
  }
  return h;
}

namespace {

constexpr std::string_view kTraceMagic = "MICLTRC1";

const char* positions_name(TracePositions p) {
  return p == TracePositions::kAll ? "all" : "last";
}

}  // namespace

void save_traces(const TraceSet& set, const std::filesystem::path& path) {
  const nlohmann::json header = {
      {"model_tag", set.model_tag},
      {"n_layers", set.n_layers},
      {"n_heads", set.n_heads},
      {"d_model", set.d_model},
      {"d_mlp", set.d_mlp},
      {"fingerprint", set.fingerprint},
      {"capture_attention", set.config.capture_attention},
      {"capture_mlp_hidden", set.config.capture_mlp_hidden},
      {"capture_residual", set.config.capture_residual},
      {"positions", positions_name(set.config.positions)}};
  ByteWriter w;
  w.bytes(kTraceMagic);
  w.u32(kTraceFormatVersion);
  w.long_string(header.dump());
  w.u32(static_cast<std::uint32_t>(set.traces.size()));
  for (const auto& t : set.traces) {
    w.short_string(t.example_id);
    w.u32(static_cast<std::uint32_t>(t.token_count));
    w.u32(static_cast<std::uint32_t>(t.query_rows));
    const std::uint8_t flags = (t.attention.empty() ? 0 : 1) |
                               (t.mlp_hidden.empty() ? 0 : 2) |
                               (t.residual.empty() ? 0 : 4);
    w.u8(flags);
    w.f64_array(t.attention);
    w.f64_array(t.mlp_hidden);
    w.f64_array(t.residual);
  }
  w.write_file(path);
}

TraceSet load_traces(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic(kTraceMagic);
  const std::uint64_t version_at = r.offset();
  if (const auto v = r.u32(); v != kTraceFormatVersion) {
    throw FormatError(version_at, "unsupported trace version " + std::to_string(v));
  }
  const std::uint64_t header_at = r.offset();
  TraceSet set;
  try {
    const auto h = nlohmann::json::parse(r.long_string());
    set.model_tag = h.at("model_tag").get<std::string>();
    set.n_layers = h.at("n_layers").get<int>();
    set.n_heads = h.at("n_heads").get<int>();
    set.d_model = h.at("d_model").get<int>();
    set.d_mlp = h.at("d_mlp").get<int>();
    set.fingerprint = h.at("fingerprint").get<std::uint64_t>();
    set.config.capture_attention = h.at("capture_attention").get<bool>();
    set.config.capture_mlp_hidden = h.at("capture_mlp_hidden").get<bool>();
    set.config.capture_residual = h.at("capture_residual").get<bool>();
    set.config.positions = h.at("positions").get<std::string>() == "last"
                               ? TracePositions::kLastOnly
                               : TracePositions::kAll;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(header_at, std::string("bad trace header: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  set.traces.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ForwardTrace t;
    t.example_id = r.short_string();
    t.n_layers = set.n_layers;
    t.n_heads = set.n_heads;
    t.d_model = set.d_model;
    t.d_mlp = set.d_mlp;
    t.token_count = static_cast<int>(r.u32());
    const std::uint64_t rows_at = r.offset();
    t.query_rows = static_cast<int>(r.u32());
    if (t.query_rows < 1 || t.query_rows > t.token_count) {
      throw FormatError(rows_at, "invalid query row count");
    }
    const std::uint8_t flags = r.u8();
    const std::size_t L = static_cast<std::size_t>(set.n_layers);
    const std::size_t R = static_cast<std::size_t>(t.query_rows);
    if (flags & 1) {
      t.attention.resize(L * static_cast<std::size_t>(set.n_heads) * R *
                         static_cast<std::size_t>(t.token_count));
      r.f64_array(t.attention);
    }
    if (flags & 2) {
      t.mlp_hidden.resize(L * R * static_cast<std::size_t>(set.d_mlp));
      r.f64_array(t.mlp_hidden);
    }
    if (flags & 4) {
      t.residual.resize(L * R * static_cast<std::size_t>(set.d_model));
      r.f64_array(t.residual);
    }
    set.traces.push_back(std::move(t));
  }
  r.expect_end();
  return set;
}

}  // namespace circuit_lab
