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

#include <limits>

#include "circuit_lab/circuit.hpp"
#include "circuit_lab/error.hpp"
#include "test_support.hpp"

using namespace circuit_lab;
using circuit_lab::testing::TempDir;

namespace {

// Report with the given [layers x heads] KL and per-layer ActMag values.
DiffReport make_report(const Eigen::MatrixXd& kl, const Eigen::VectorXd& act_pre,
                       const Eigen::VectorXd& act_post) {
  DiffReport r;
  r.kl.metric = "attention_kl";
  r.kl.values = kl;
  r.actmag_pre.values = act_pre;
  r.actmag_post.values = act_post;
  for (Eigen::Index l = 0; l < kl.rows(); ++l) {
    std::vector<NeuronDelta> list;
    for (int n = 0; n < 4; ++n) {
      list.push_back({static_cast<int>(l), n, 0.0, 1.0 - 0.1 * n, 1.0 - 0.1 * n});
    }
    r.neuron_deltas.push_back(list);
  }
  return r;
}

DiffReport kl_only(const Eigen::MatrixXd& kl) {
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(kl.rows());
  return make_report(kl, ones, ones);
}

}  // namespace

TEST(Circuit, PicksTopLayersByMeanKl) {
  Eigen::MatrixXd kl(4, 2);
  kl << 0.1, 0.1,
        0.5, 0.7,
        0.0, 0.2,
        0.9, 0.1;
  CircuitOptions opts;
  opts.k = 2;
  const auto spec = identify_circuit(kl_only(kl), opts);
  ASSERT_EQ(spec.layers.size(), 2u);
  EXPECT_EQ(spec.layers[0].layer, 1);
  EXPECT_DOUBLE_EQ(spec.layers[0].score, 0.6);
  EXPECT_EQ(spec.layers[1].layer, 3);
  EXPECT_EQ(spec.neurons.size(), 2u);
  EXPECT_EQ(spec.neurons[0].front().layer, 1);
}

TEST(Circuit, TiesGoToLowerLayer) {
  Eigen::MatrixXd kl(3, 1);
  kl << 0.2, 0.5, 0.5;
  CircuitOptions opts;
  opts.k = 1;
  EXPECT_EQ(identify_circuit(kl_only(kl), opts).layer_indices(), (std::vector<int>{1}));
}

TEST(Circuit, HeadsAtOrAboveQuantile) {
  Eigen::MatrixXd kl(2, 2);
  kl << 0.1, 0.4,
        0.2, 0.3;
  CircuitOptions opts;
  opts.k = 1;
  opts.head_quantile = 0.5;
  const auto spec = identify_circuit(kl_only(kl), opts);
  EXPECT_DOUBLE_EQ(spec.head_threshold, 0.25);
  ASSERT_EQ(spec.heads.size(), 2u);
  EXPECT_EQ(spec.heads[0], (CircuitHead{0, 1, 0.4, false}));
  EXPECT_EQ(spec.heads[1], (CircuitHead{1, 1, 0.3, true}));
}

TEST(Circuit, CombinedScoreUsesActivationChange) {
  Eigen::MatrixXd kl(4, 1);
  kl << 0.30, 0.31, 0.30, 0.305;
  Eigen::VectorXd pre(4), post(4);
  pre << 1.0, 1.0, 1.0, 1.0;
  post << 1.0, 1.0, 1.0, 3.0;
  CircuitOptions opts;
  opts.k = 1;
  EXPECT_EQ(identify_circuit(make_report(kl, pre, post), opts).layer_indices(),
            (std::vector<int>{1}));
  opts.score = CircuitScore::kCombined;
  EXPECT_EQ(identify_circuit(make_report(kl, pre, post), opts).layer_indices(),
            (std::vector<int>{3}));
}

TEST(Circuit, Errors) {
  const auto zero = kl_only(Eigen::MatrixXd::Zero(3, 2));
  EXPECT_THROW(identify_circuit(zero), DegenerateInputError);
  Eigen::MatrixXd kl = Eigen::MatrixXd::Ones(3, 2);
  CircuitOptions opts;
  opts.k = 4;
  EXPECT_THROW(identify_circuit(kl_only(kl), opts), ConfigError);
  opts.k = 0;
  EXPECT_THROW(identify_circuit(kl_only(kl), opts), ConfigError);
  kl(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(identify_circuit(kl_only(kl)), NumericError);
  EXPECT_THROW(parse_circuit_score("median"), ConfigError);
}

TEST(Circuit, LoraTargetsAreSortedLayers) {
  Eigen::MatrixXd kl(4, 1);
  kl << 0.1, 0.2, 0.9, 0.5;
  CircuitOptions opts;
  opts.k = 2;
  const auto spec = identify_circuit(kl_only(kl), opts);
  EXPECT_EQ(spec.layer_indices(), (std::vector<int>{2, 3}));
  LoraConfig base;
  base.rank = 4;
  const auto lora = to_lora_targets(spec, base);
  EXPECT_EQ(lora.rank, 4);
  ASSERT_TRUE(lora.target_layers.has_value());
  EXPECT_EQ(*lora.target_layers, (std::vector<int>{2, 3}));
  EXPECT_THROW(to_lora_targets(CircuitSpec{}), ConfigError);
}

TEST(Circuit, JsonRoundTrip) {
  Eigen::MatrixXd kl(3, 2);
  kl << 0.11, 0.37, 0.05, 0.91, 0.4, 0.2;
  auto report = kl_only(kl);
  report.metadata = {{"models", {"a", "b"}}};
  CircuitOptions opts;
  opts.k = 2;
  const auto spec = identify_circuit(report, opts);
  EXPECT_EQ(circuit_from_json(circuit_to_json(spec)), spec);
  TempDir dir("circuit_io");
  save_circuit(spec, dir / "c.json");
  EXPECT_EQ(load_circuit(dir / "c.json"), spec);
  EXPECT_EQ(circuit_to_json(spec)["index_base"], 0);
  EXPECT_THROW(circuit_from_json({{"score", "kl"}}), ConfigError);
}
