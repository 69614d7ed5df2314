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

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "circuit_lab/error.hpp"
#include "circuit_lab/gradcheck.hpp"
#include "circuit_lab/model.hpp"
#include "test_support.hpp"

using namespace circuit_lab;
using circuit_lab::testing::TempDir;
using circuit_lab::testing::random_tokens;
using circuit_lab::testing::tiny_config;
using circuit_lab::testing::tiny_model;

TEST(Model, ParamCountClosedFormDefault) {
  // 512·64 + 128·64 + 4·(4·64² + 2·64·256 + 9·64 + 256) + 2·64
  EXPECT_EQ(count_params(ModelConfig{}), 241024u);
}

TEST(Model, ParamCountMatchesTensors) {
  for (bool tied : {true, false}) {
    auto c = tiny_config(40, 3);
    c.tie_lm_head = tied;
    Rng rng(2);
    const auto m = GptModel<float>::init(c, rng);
    EXPECT_EQ(m.count_params(), count_params(c)) << "tied " << tied;
    std::size_t total = 0;
    for (const auto& p : m.parameters()) total += static_cast<std::size_t>(p.tensor.size());
    EXPECT_EQ(total, count_params(c));
  }
}

TEST(Model, ConfigValidation) {
  auto c = tiny_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.n_layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, ConfigJsonRoundTrip) {
  auto c = tiny_config(77, 3);
  c.seed = 99;
  c.tie_lm_head = false;
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
}

TEST(Model, InitIsDeterministic) {
  const auto a = tiny_model(5);
  const auto b = tiny_model(5);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(pa[i].tensor.value(), pb[i].tensor.value());
  }
}

TEST(Model, ParameterNamesAndLayers) {
  const auto m = tiny_model();
  const auto params = m.parameters();
  EXPECT_EQ(params.front().name, "tok_emb");
  EXPECT_EQ(params.front().layer, -1);
  bool saw_layer1 = false;
  for (const auto& p : params) {
    if (p.name.rfind("layers.1.", 0) == 0) {
      EXPECT_EQ(p.layer, 1);
      saw_layer1 = true;
    }
  }
  EXPECT_TRUE(saw_layer1);
}

TEST(Model, LogitsShapeAndFinite) {
  const auto m = tiny_model();
  Rng rng(1);
  const auto tokens = random_tokens(rng, 10, 32);
  const auto r = forward(m, std::span<const TokenId>(tokens));
  EXPECT_EQ(r.logits.rows(), 10);
  EXPECT_EQ(r.logits.cols(), 32);
  EXPECT_TRUE(r.logits.value().allFinite());
}

TEST(Model, CausalPrefixInvariance) {
  const auto m = tiny_model(3);
  Rng rng(4);
  auto tokens = random_tokens(rng, 12, 32);
  const auto full = forward(m, std::span<const TokenId>(tokens)).logits;
  tokens[11] = tokens[11] == 5 ? 6 : 5;
  const auto changed = forward(m, std::span<const TokenId>(tokens)).logits;
  EXPECT_EQ(full.value().topRows(11), changed.value().topRows(11));
  const std::vector<TokenId> prefix(tokens.begin(), tokens.begin() + 6);
  const auto short_run = forward(m, std::span<const TokenId>(prefix)).logits;
  EXPECT_LT((short_run.value() - full.value().topRows(6)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Model, RejectsBadInput) {
  const auto m = tiny_model();
  const std::vector<TokenId> empty;
  EXPECT_THROW(forward(m, std::span<const TokenId>(empty)), LengthError);
  const std::vector<TokenId> too_long(25, 5);
  EXPECT_THROW(forward(m, std::span<const TokenId>(too_long)), LengthError);
  const std::vector<TokenId> bad = {1, 32};
  EXPECT_THROW(forward(m, std::span<const TokenId>(bad)), ShapeError);
}

TEST(Model, TracingDoesNotChangeLogits) {
  const auto m = tiny_model(8);
  Rng rng(9);
  const auto tokens = random_tokens(rng, 9, 32);
  TraceConfig tc;
  tc.capture_residual = true;
  const auto plain = forward(m, std::span<const TokenId>(tokens));
  const auto traced = forward(m, std::span<const TokenId>(tokens), &tc);
  ASSERT_TRUE(traced.trace.has_value());
  EXPECT_EQ(std::memcmp(plain.logits.data(), traced.logits.data(),
                        sizeof(float) * static_cast<std::size_t>(plain.logits.size())),
            0);
  EXPECT_EQ(traced.trace->attention.size(), 2u * 2u * 9u * 9u);
  EXPECT_EQ(traced.trace->mlp_hidden.size(), 2u * 9u * 32u);
  EXPECT_EQ(traced.trace->residual.size(), 2u * 9u * 16u);
}

TEST(Model, LastOnlyTraceKeepsFinalRow) {
  const auto m = tiny_model(8);
  Rng rng(9);
  const auto tokens = random_tokens(rng, 7, 32);
  TraceConfig all, last;
  last.positions = TracePositions::kLastOnly;
  const auto ta = *forward(m, std::span<const TokenId>(tokens), &all).trace;
  const auto tl = *forward(m, std::span<const TokenId>(tokens), &last).trace;
  EXPECT_EQ(tl.query_rows, 1);
  EXPECT_EQ(tl.first_query(), 6);
  for (int l = 0; l < 2; ++l) {
    for (int h = 0; h < 2; ++h) {
      const auto a = ta.attention_row(l, h, 6);
      const auto b = tl.attention_row(l, h, 0);
      EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    }
  }
}

TEST(Model, SaveLoadRoundTrip) {
  TempDir dir("model_io");
  auto c = tiny_config(32, 2);
  c.tie_lm_head = false;
  Rng rng(12);
  const auto m = GptModel<float>::init(c, rng);
  save_model(m, dir / "m.ckpt", {{"note", "x"}});
  const auto loaded = load_model<float>(dir / "m.ckpt");
  EXPECT_EQ(loaded.model.config, c);
  EXPECT_EQ(loaded.metadata["note"], "x");
  const auto pa = m.parameters();
  const auto pb = loaded.model.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].tensor.value(), pb[i].tensor.value());
}

TEST(Model, LoadRejectsCorruptFiles) {
  TempDir dir("model_bad");
  const auto m = tiny_model();
  save_model(m, dir / "m.ckpt");
  {
    std::ofstream out(dir / "bad.ckpt", std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(load_model<float>(dir / "bad.ckpt"), FormatError);
  std::ifstream in(dir / "m.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  bytes.resize(bytes.size() - 7);
  {
    std::ofstream out(dir / "short.ckpt", std::ios::binary);
    out << bytes;
  }
  EXPECT_THROW(load_model<float>(dir / "short.ckpt"), FormatError);
}

TEST(Model, CastPreservesValues) {
  const auto m = tiny_model(4);
  const auto d = m.cast<double>();
  Rng rng(2);
  const auto tokens = random_tokens(rng, 8, 32);
  const auto lf = forward(m, std::span<const TokenId>(tokens)).logits;
  const auto ld = forward(d, std::span<const TokenId>(tokens)).logits;
  EXPECT_LT((lf.value().cast<double>() - ld.value()).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Model, CloneIsIndependent) {
  const auto m = tiny_model(4);
  auto c = m.clone();
  c.token_embedding.value()(0, 0) += 1.0f;
  EXPECT_NE(c.token_embedding.value()(0, 0), m.token_embedding.value()(0, 0));
}

TEST(Model, GreedyGenerationStopsAndIsDeterministic) {
  const auto m = tiny_model(6);
  const std::vector<TokenId> prompt = {1, 7, 9, 3};
  const auto a = generate_greedy(m, std::span<const TokenId>(prompt), 5);
  const auto b = generate_greedy(m, std::span<const TokenId>(prompt), 5);
  EXPECT_EQ(a, b);
  EXPECT_LE(a.size(), 5u);
  const auto full = generate_greedy(m, std::span<const TokenId>(prompt), 100, -1);
  EXPECT_EQ(full.size(), 20u);
}

TEST(Model, SequenceLogProbIsNegative) {
  const auto m = tiny_model(6);
  const std::vector<TokenId> article = {7, 8, 9};
  const std::vector<TokenId> summary = {10, 11};
  const double lp = sequence_log_prob(m, std::span<const TokenId>(article),
                                      std::span<const TokenId>(summary));
  EXPECT_LT(lp, 0.0);
  EXPECT_TRUE(std::isfinite(lp));
}

TEST(Model, FullModelGradientCheck) {
  Rng rng(21);
  auto model = GptModel<double>::init(tiny_config(20, 2), rng);
  const auto tokens = random_tokens(rng, 6, 20);
  std::vector<TokenId> targets(tokens.begin() + 1, tokens.end());
  targets.push_back(5);
  const std::vector<bool> mask(6, true);
  std::vector<Tensor<double>> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  const auto r = check_gradients<double>(
      [&] {
        const auto h = forward_hidden(model, std::span<const TokenId>(tokens));
        return cross_entropy_masked(output_logits(model, h),
                                    std::span<const TokenId>(targets), mask);
      },
      std::span<Tensor<double>>(params), 1e-3);
  EXPECT_LT(r.max_relative_error, 1e-5);
}
