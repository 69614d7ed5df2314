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

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <utility>
#include <string>
#include <vector>

#include "circuit_lab/corpus.hpp"
#include "circuit_lab/model.hpp"
#include "circuit_lab/rng.hpp"
#include "circuit_lab/trace.hpp"

namespace circuit_lab::testing {

inline ModelConfig tiny_config(int vocab = 32, int layers = 2) {
  ModelConfig c;
  c.n_layers = layers;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_mlp = 32;
  c.vocab_size = vocab;
  c.max_seq_len = 24;
  return c;
}

template <typename Scalar = float>
GptModel<Scalar> tiny_model(std::uint64_t seed = 1, int vocab = 32, int layers = 2) {
  Rng rng(seed);
  return GptModel<Scalar>::init(tiny_config(vocab, layers), rng);
}

inline std::vector<TokenId> random_tokens(Rng& rng, int n, int vocab) {
  std::vector<TokenId> out(static_cast<std::size_t>(n));
  for (auto& t : out) t = static_cast<TokenId>(4 + rng.below(vocab - 4));
  return out;
}

// Small synthetic corpus with its tokenizer, encoded to the given length.
struct TinyData {
  Corpus corpus;
  Tokenizer tokenizer;
  std::vector<EncodedExample> encoded;
};

inline TinyData tiny_data(std::size_t n = 12, int max_len = 24, std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.n_examples = n;
  spec.sentences_per_article = 4;
  spec.salient_per_article = 1;
  spec.vocab_word_count = 40;
  spec.seed = seed;
  Rng rng(seed);
  TinyData d;
  d.corpus = generate_synthetic(spec, rng);
  d.tokenizer = Tokenizer::build(d.corpus);
  d.encoded = encode_corpus(d.tokenizer, d.corpus, max_len, 8);
  return d;
}

struct TraceShape {
  int n_layers = 2;
  int n_heads = 3;
  int d_model = 4;
  int d_mlp = 5;
  int examples = 3;
  int min_tokens = 2;
  int max_tokens = 7;
};

// Causal attention rows with random logits; about one row in five is made
// sparse (exact zeros on some valid keys). MLP values are signed.
inline ForwardTrace random_trace(Rng& rng, const TraceShape& s, int tokens, int rows) {
  ForwardTrace t;
  t.n_layers = s.n_layers;
  t.n_heads = s.n_heads;
  t.d_model = s.d_model;
  t.d_mlp = s.d_mlp;
  t.token_count = tokens;
  t.query_rows = rows;
  const int first = tokens - rows;
  for (int l = 0; l < s.n_layers; ++l) {
    for (int h = 0; h < s.n_heads; ++h) {
      for (int r = 0; r < rows; ++r) {
        const int valid = first + r + 1;
        std::vector<double> row(static_cast<std::size_t>(tokens), 0.0);
        double z = 0.0;
        const bool sparse = valid > 1 && rng.uniform() < 0.2;
        for (int k = 0; k < valid; ++k) {
          if (sparse && k % 2 == 1) continue;
          row[static_cast<std::size_t>(k)] = std::exp(rng.normal(0.0, 1.5));
          z += row[static_cast<std::size_t>(k)];
        }
        for (auto& v : row) v /= z;
        t.attention.insert(t.attention.end(), row.begin(), row.end());
      }
    }
  }
  for (int i = 0; i < s.n_layers * rows * s.d_mlp; ++i) t.mlp_hidden.push_back(rng.normal(0.0, 1.0));
  for (int i = 0; i < s.n_layers * rows * s.d_model; ++i) t.residual.push_back(rng.normal(0.0, 2.0));
  return t;
}

// Two comparable sets (same token counts and query rows per example).
inline std::pair<TraceSet, TraceSet> random_trace_pair(Rng& rng, const TraceShape& s,
                                                       bool last_only = false) {
  TraceSet a, b;
  for (TraceSet* set : {&a, &b}) {
    set->n_layers = s.n_layers;
    set->n_heads = s.n_heads;
    set->d_model = s.d_model;
    set->d_mlp = s.d_mlp;
    set->config.capture_residual = true;
    if (last_only) set->config.positions = TracePositions::kLastOnly;
    set->fingerprint = 0xC0FFEE;
  }
  a.model_tag = "pre";
  b.model_tag = "post";
  for (int e = 0; e < s.examples; ++e) {
    const int tokens = s.min_tokens +
        static_cast<int>(rng.below(static_cast<std::uint64_t>(s.max_tokens - s.min_tokens + 1)));
    const int rows = last_only ? 1 : tokens;
    a.traces.push_back(random_trace(rng, s, tokens, rows));
    b.traces.push_back(random_trace(rng, s, tokens, rows));
    a.traces.back().example_id = b.traces.back().example_id = "e" + std::to_string(e);
  }
  return {std::move(a), std::move(b)};
}

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() /
              ("circuit_lab_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace circuit_lab::testing
