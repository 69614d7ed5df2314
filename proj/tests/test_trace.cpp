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

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "circuit_lab/error.hpp"
#include "circuit_lab/instrumentation.hpp"
#include "circuit_lab/trace.hpp"
#include "test_support.hpp"

using namespace circuit_lab;
using circuit_lab::testing::TempDir;
using circuit_lab::testing::tiny_data;

namespace {

struct Fixture {
  circuit_lab::testing::TinyData data = tiny_data(6);
  GptModel<float> model = [&] {
    Rng rng(4);
    return GptModel<float>::init(circuit_lab::testing::tiny_config(data.tokenizer.size()), rng);
  }();
};

}  // namespace

TEST(Trace, ConfigMustCaptureSomething) {
  TraceConfig c;
  c.capture_attention = false;
  c.capture_mlp_hidden = false;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Trace, CorpusTraceShapesAndRows) {
  Fixture f;
  TraceConfig tc;
  const auto set = trace_corpus(f.model, f.data.encoded, tc, "base");
  ASSERT_EQ(set.traces.size(), f.data.encoded.size());
  EXPECT_EQ(set.n_layers, 2);
  EXPECT_EQ(set.fingerprint, corpus_fingerprint(f.data.encoded));
  for (std::size_t i = 0; i < set.traces.size(); ++i) {
    const auto& t = set.traces[i];
    EXPECT_EQ(t.example_id, f.data.encoded[i].id);
    EXPECT_EQ(t.token_count, static_cast<int>(f.data.encoded[i].tokens.size()));
    EXPECT_EQ(t.query_rows, t.token_count);
    for (int l = 0; l < 2; ++l) {
      for (int h = 0; h < 2; ++h) {
        for (int r = 0; r < t.query_rows; ++r) {
          const auto row = t.attention_row(l, h, r);
          double total = 0.0;
          for (int k = 0; k < t.token_count; ++k) {
            if (k > r) {
              ASSERT_EQ(row[static_cast<std::size_t>(k)], 0.0);
            }
            total += row[static_cast<std::size_t>(k)];
          }
          ASSERT_NEAR(total, 1.0, 1e-5);
        }
      }
    }
  }
}

TEST(Trace, ParallelMatchesSerial) {
  Fixture f;
  TraceConfig tc;
  ::setenv("CIRCUIT_LAB_THREADS", "1", 1);
  const auto serial = trace_corpus(f.model, f.data.encoded, tc, "m");
  ::setenv("CIRCUIT_LAB_THREADS", "3", 1);
  const auto threaded = trace_corpus(f.model, f.data.encoded, tc, "m");
  ::unsetenv("CIRCUIT_LAB_THREADS");
  EXPECT_EQ(serial, threaded);
}

TEST(Trace, FileRoundTrip) {
  Fixture f;
  TempDir dir("trace_io");
  TraceConfig tc;
  tc.capture_residual = true;
  const auto set = trace_corpus(f.model, f.data.encoded, tc, "tag");
  save_traces(set, dir / "t.trc");
  EXPECT_EQ(load_traces(dir / "t.trc"), set);
}

TEST(Trace, CorruptFileIsFormatError) {
  Fixture f;
  TempDir dir("trace_bad");
  const auto set = trace_corpus(f.model, f.data.encoded, TraceConfig{}, "tag");
  save_traces(set, dir / "t.trc");
  std::ifstream in(dir / "t.trc", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  {
    std::ofstream out(dir / "short.trc", std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  EXPECT_THROW(load_traces(dir / "short.trc"), FormatError);
  bytes[0] = 'X';
  {
    std::ofstream out(dir / "magic.trc", std::ios::binary);
    out << bytes;
  }
  EXPECT_THROW(load_traces(dir / "magic.trc"), FormatError);
}

TEST(Trace, ComparabilityChecks) {
  Fixture f;
  const auto a = trace_corpus(f.model, f.data.encoded, TraceConfig{}, "a");
  auto b = a;
  EXPECT_NO_THROW(a.check_comparable(b));
  b.fingerprint ^= 1;
  EXPECT_THROW(a.check_comparable(b), ComparisonError);
  b = a;
  b.n_heads = 4;
  EXPECT_THROW(a.check_comparable(b), ComparisonError);
  b = a;
  b.traces.pop_back();
  EXPECT_THROW(a.check_comparable(b), ComparisonError);
}

TEST(Trace, FingerprintSensitiveToOrderAndLength) {
  const std::vector<std::vector<TokenId>> a = {{1, 2}, {3}};
  const std::vector<std::vector<TokenId>> b = {{3}, {1, 2}};
  const std::vector<std::vector<TokenId>> c = {{1}, {2, 3}};
  EXPECT_NE(fingerprint_sequences(a), fingerprint_sequences(b));
  EXPECT_NE(fingerprint_sequences(a), fingerprint_sequences(c));
  EXPECT_EQ(fingerprint_sequences(a), fingerprint_sequences(a));
}

TEST(Trace, RejectsEmptyAndOverlongCorpora) {
  Fixture f;
  EXPECT_THROW(trace_corpus(f.model, {}, TraceConfig{}, "x"), DegenerateInputError);
  auto long_corpus = f.data.encoded;
  long_corpus[0].tokens.assign(30, 5);
  EXPECT_THROW(trace_corpus(f.model, long_corpus, TraceConfig{}, "x"), LengthError);
}
