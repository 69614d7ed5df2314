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
#include <filesystem>
#include <vector>

#include "circuit_lab/error.hpp"
#include "circuit_lab/metrics.hpp"
#include "test_support.hpp"

using namespace circuit_lab;
using circuit_lab::testing::TempDir;
using circuit_lab::testing::TraceShape;
using circuit_lab::testing::random_trace_pair;

namespace {

// One example through a one-layer, one-head model. Attention rows are uniform
// over their valid keys and every MLP value equals `mlp_value`.
TraceSet uniform_set(const std::string& tag, int tokens, int d_mlp, double mlp_value) {
  TraceSet s;
  s.model_tag = tag;
  s.n_layers = 1;
  s.n_heads = 1;
  s.d_model = 2;
  s.d_mlp = d_mlp;
  ForwardTrace t;
  t.n_layers = 1;
  t.n_heads = 1;
  t.d_model = 2;
  t.d_mlp = d_mlp;
  t.token_count = tokens;
  t.query_rows = tokens;
  for (int r = 0; r < tokens; ++r) {
    for (int k = 0; k < tokens; ++k) t.attention.push_back(k <= r ? 1.0 / (r + 1) : 0.0);
  }
  t.mlp_hidden.assign(static_cast<std::size_t>(tokens * d_mlp), mlp_value);
  s.traces.push_back(t);
  return s;
}

}  // namespace

TEST(Kl, KnownValuesBothDirections) {
  const std::vector<double> p = {0.5, 0.5};
  const std::vector<double> q = {0.9, 0.1};
  EXPECT_NEAR(kl_divergence(p, q), 0.5108256238, 1e-8);
  EXPECT_NEAR(kl_divergence(q, p), 0.3680642071, 1e-8);
  EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-15);
}

TEST(Kl, ZerosAreSmoothedNotInfinite) {
  const std::vector<double> p = {1.0, 0.0};
  const std::vector<double> q = {0.0, 1.0};
  const double kl = kl_divergence(p, q);
  EXPECT_TRUE(std::isfinite(kl));
  EXPECT_GT(kl, 20.0);
}

TEST(Kl, RejectsInvalidInputs) {
  const std::vector<double> a = {0.5, 0.5};
  const std::vector<double> b = {0.2, 0.3, 0.5};
  const std::vector<double> bad = {0.7, 0.7};
  const std::vector<double> neg = {1.5, -0.5};
  EXPECT_THROW(kl_divergence(a, b), ShapeError);
  EXPECT_THROW(kl_divergence(a, bad), ContractError);
  EXPECT_THROW(kl_divergence(neg, a), ContractError);
}

TEST(Entropy, KnownValues) {
  const std::vector<double> p = {0.5, 0.25, 0.25};
  EXPECT_NEAR(entropy(p), 1.0397207708, 1e-9);
  const std::vector<double> one_hot = {0.0, 1.0, 0.0};
  EXPECT_EQ(entropy(one_hot), 0.0);
}

TEST(AttentionKl, IdenticalSetsGiveZero) {
  Rng rng(1);
  auto [a, b] = random_trace_pair(rng, TraceShape{});
  const auto m = attention_kl(a, a);
  EXPECT_LT(m.values.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AttentionKl, UsesOnlyValidKeys) {
  auto pre = uniform_set("pre", 3, 1, 0.0);
  auto post = pre;
  post.model_tag = "post";
  // Row 1 of post: [0.9, 0.1, 0]; row 2 unchanged; row 0 has one key.
  auto& att = post.traces[0].attention;
  att[3] = 0.9;
  att[4] = 0.1;
  const auto m = attention_kl(pre, post);
  EXPECT_NEAR(m.values(0, 0), 0.5108256238 / 3.0, 1e-8);
  const auto r = attention_kl(pre, post, KlDirection::kPostToPre);
  EXPECT_NEAR(r.values(0, 0), 0.3680642071 / 3.0, 1e-8);
  EXPECT_EQ(m.sources, (std::vector<std::string>{"pre", "post"}));
  EXPECT_EQ(r.sources, (std::vector<std::string>{"post", "pre"}));
}

TEST(AttentionKl, IncomparableSetsThrow) {
  Rng rng(2);
  auto [a, b] = random_trace_pair(rng, TraceShape{});
  b.fingerprint = 1;
  EXPECT_THROW(attention_kl(a, b), ComparisonError);
}

TEST(AttentionEntropy, UniformRowsGiveMeanLogCount) {
  const auto s = uniform_set("s", 4, 1, 0.0);
  const auto m = attention_entropy(s);
  const double expected = (0.0 + std::log(2.0) + std::log(3.0) + std::log(4.0)) / 4.0;
  EXPECT_NEAR(m.values(0, 0), expected, 1e-12);
}

TEST(EntropyDiff, FractionOfNegativeCells) {
  HeadMatrix pre, post;
  pre.values = Eigen::MatrixXd::Ones(4, 4);
  post.values = pre.values;
  post.values(0, 0) = 0.5;
  post.values(1, 2) = 0.9;
  post.values(2, 1) = 0.0;
  post.values(3, 3) = 0.99;
  post.values(3, 0) = 0.1;
  post.values(2, 2) = 1.5;
  const auto d = entropy_diff(pre, post);
  EXPECT_DOUBLE_EQ(d.fraction_negative, 5.0 / 16.0);
  EXPECT_DOUBLE_EQ(d.diff.values(0, 0), -0.5);
  HeadMatrix other;
  other.values = Eigen::MatrixXd::Ones(3, 4);
  EXPECT_THROW(entropy_diff(pre, other), ComparisonError);
}

TEST(ActivationMagnitude, MeanAbsoluteValue) {
  auto s = uniform_set("s", 3, 4, -2.0);
  const auto v = activation_magnitude(s);
  EXPECT_DOUBLE_EQ(v.values[0], 2.0);
  EXPECT_THROW(activation_magnitude(s, ActivationSource::kResidual), ConfigError);
}

TEST(ActivationMagnitude, PercentChange) {
  LayerVector pre, post;
  pre.values = Eigen::Vector3d(2.0, 0.0, 4.0);
  post.values = Eigen::Vector3d(3.0, 1.0, 1.0);
  const auto pct = percent_change(pre, post);
  EXPECT_DOUBLE_EQ(pct[0], 50.0);
  EXPECT_DOUBLE_EQ(pct[1], 0.0);
  EXPECT_DOUBLE_EQ(pct[2], -75.0);
}

TEST(NeuronDeltas, SignedDeltaAndRanking) {
  auto pre = uniform_set("pre", 2, 4, 1.0);
  auto post = uniform_set("post", 2, 4, 1.0);
  // Neuron 2 flips sign; neuron 0 moves by 0.5; the rest tie at zero.
  for (int r = 0; r < 2; ++r) {
    post.traces[0].mlp_hidden[static_cast<std::size_t>(r * 4 + 2)] = -1.0;
    post.traces[0].mlp_hidden[static_cast<std::size_t>(r * 4 + 0)] = 1.5;
  }
  const auto d = neuron_deltas(pre, post, 0, 10);
  ASSERT_EQ(d.size(), 4u);
  EXPECT_EQ(d[0].neuron, 2);
  EXPECT_DOUBLE_EQ(d[0].delta, -2.0);
  EXPECT_DOUBLE_EQ(d[0].before, 1.0);
  EXPECT_DOUBLE_EQ(d[0].after, -1.0);
  EXPECT_EQ(d[1].neuron, 0);
  EXPECT_EQ(d[2].neuron, 1);
  EXPECT_EQ(d[3].neuron, 3);
  EXPECT_EQ(neuron_deltas(pre, post, 0, 2).size(), 2u);
  EXPECT_THROW(neuron_deltas(pre, post, 1, 2), ConfigError);
  EXPECT_THROW(neuron_deltas(pre, post, 0, 0), ConfigError);
}

TEST(LayerMean, RowMeans) {
  HeadMatrix m;
  m.metric = "attention_kl";
  m.values = Eigen::MatrixXd(2, 2);
  m.values << 1, 3, 0, 4;
  const auto v = layer_mean(m);
  EXPECT_DOUBLE_EQ(v.values[0], 2.0);
  EXPECT_DOUBLE_EQ(v.values[1], 2.0);
}

TEST(LayerKlCompare, OneEntryPerPair) {
  Rng rng(4);
  auto [a, b] = random_trace_pair(rng, TraceShape{});
  const auto out = layer_kl_compare({{&a, &b, "x"}, {&b, &a, "y"}});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].label, "x");
  EXPECT_EQ(out[0].values.values.size(), 2);
  EXPECT_THROW(layer_kl_compare({{&a, nullptr, "z"}}), ContractError);
}

TEST(Pca3, RecoversDominantAxes) {
  Rng rng(5);
  Eigen::MatrixXd x(200, 5);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    x(i, 0) = rng.normal(0, 0.01);
    x(i, 1) = rng.normal(0, 10.0);
    x(i, 2) = rng.normal(0, 0.01);
    x(i, 3) = rng.normal(0, 3.0);
    x(i, 4) = rng.normal(0, 1.0);
  }
  const auto p = pca3_project(x);
  EXPECT_NEAR(std::abs(p.components(0, 1)), 1.0, 1e-3);
  EXPECT_NEAR(std::abs(p.components(1, 3)), 1.0, 1e-3);
  EXPECT_NEAR(std::abs(p.components(2, 4)), 1.0, 1e-3);
  const Eigen::MatrixXd gram = p.components * p.components.transpose();
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_GE(p.explained[0], p.explained[1]);
  EXPECT_GE(p.explained[1], p.explained[2]);
  EXPECT_EQ(p.coords.rows(), 200);
  EXPECT_NEAR(p.coords.col(0).mean(), 0.0, 1e-9);
}

TEST(Pca3, RankDeficientStillOrthonormal) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 4);
  for (int i = 0; i < 6; ++i) x(i, 2) = i;
  const auto p = pca3_project(x);
  const Eigen::MatrixXd gram = p.components * p.components.transpose();
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(p.explained[1], 0.0, 1e-9);
}

TEST(Pca3, DegenerateInputs) {
  EXPECT_THROW(pca3_project(Eigen::MatrixXd::Ones(3, 5)), DegenerateInputError);
  EXPECT_THROW(pca3_project(Eigen::MatrixXd::Ones(10, 2)), DegenerateInputError);
  EXPECT_THROW(pca3_project(Eigen::MatrixXd::Ones(10, 5)), DegenerateInputError);
}

TEST(DiffReport, SaveLoadRoundTrip) {
  Rng rng(6);
  auto [a, b] = random_trace_pair(rng, TraceShape{});
  DiffOptions opts;
  opts.top_n = 3;
  const auto r = compute_diff_report(a, b, opts);
  EXPECT_EQ(r.layer_kl.front().label, "pre_vs_post");
  ASSERT_EQ(r.neuron_deltas.size(), 2u);
  EXPECT_EQ(r.neuron_deltas[0].size(), 3u);

  TempDir dir("report_rt");
  save_report(r, dir.path());
  for (const auto& f : report_files(2)) EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const auto back = load_report(dir.path());
  EXPECT_EQ(back.kl.values, r.kl.values);
  EXPECT_EQ(back.entropy_diff.values, r.entropy_diff.values);
  EXPECT_EQ(back.actmag_pre.values, r.actmag_pre.values);
  EXPECT_EQ(back.actmag_post.values, r.actmag_post.values);
  EXPECT_EQ(back.fraction_decreased_entropy, r.fraction_decreased_entropy);
  EXPECT_EQ(back.neuron_deltas, r.neuron_deltas);
  ASSERT_EQ(back.layer_kl.size(), 1u);
  EXPECT_EQ(back.layer_kl[0].values.values, r.layer_kl[0].values.values);
}

TEST(DiffReport, MissingFilesAreListed) {
  Rng rng(7);
  auto [a, b] = random_trace_pair(rng, TraceShape{});
  TempDir dir("report_missing");
  save_report(compute_diff_report(a, b), dir.path());
  std::filesystem::remove(dir / "kl.csv");
  std::filesystem::remove(dir / "neurons_layer1.csv");
  try {
    load_report(dir.path());
    FAIL() << "expected ReportError";
  } catch (const ReportError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("kl.csv"), std::string::npos);
    EXPECT_NE(what.find("neurons_layer1.csv"), std::string::npos);
    EXPECT_EQ(what.find("entropy_pre.csv"), std::string::npos);
  }
}

TEST(DiffReport, MetadataDescribesRun) {
  Rng rng(8);
  auto [a, b] = random_trace_pair(rng, TraceShape{});
  DiffOptions opts;
  opts.direction = KlDirection::kPostToPre;
  const auto r = compute_diff_report(a, b, opts);
  EXPECT_EQ(r.metadata["n_layers"], 2);
  EXPECT_EQ(r.metadata["n_heads"], 3);
  EXPECT_EQ(r.metadata["kl_direction"], "post||pre");
}
