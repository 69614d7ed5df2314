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
#include <cstdlib>
#include <fstream>
#include <vector>

#include "circuit_lab/error.hpp"
#include "circuit_lab/training.hpp"
#include "test_support.hpp"

using namespace circuit_lab;
using circuit_lab::testing::TempDir;
using circuit_lab::testing::tiny_data;

namespace {

TrainConfig quick_config(int epochs = 3) {
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.batch_size = 4;
  c.max_epochs = epochs;
  c.patience = epochs;
  c.seed = 7;
  return c;
}

GptModel<float> model_for(const circuit_lab::testing::TinyData& d, std::uint64_t seed = 2) {
  auto c = circuit_lab::testing::tiny_config(d.tokenizer.size());
  Rng rng(seed);
  return GptModel<float>::init(c, rng);
}

}  // namespace

TEST(EarlyStopping, PatienceCountsStaleEpochs) {
  EarlyStopping s(2, 0.01);
  EXPECT_TRUE(s.update(1.0));
  EXPECT_FALSE(s.update(0.995));  // below min_delta
  EXPECT_FALSE(s.should_stop());
  EXPECT_TRUE(s.update(0.9));
  EXPECT_FALSE(s.update(0.95));
  EXPECT_FALSE(s.update(0.91));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 3);
  EXPECT_DOUBLE_EQ(s.best_loss(), 0.9);
}

TEST(TrainConfig, Validation) {
  auto c = quick_config();
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = quick_config();
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = quick_config();
  c.beta2 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfig, JsonRoundTrip) {
  auto c = quick_config();
  c.trainable_layers = std::vector<int>{1, 3};
  const auto back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.learning_rate, c.learning_rate);
  EXPECT_EQ(back.batch_size, c.batch_size);
  ASSERT_TRUE(back.trainable_layers.has_value());
  EXPECT_EQ(*back.trainable_layers, (std::vector<int>{1, 3}));
}

TEST(ClipGradNorm, RescalesToMaxNorm) {
  std::vector<Tensor<double>> p = {Tensor<double>(Shape{1, 2}, true), Tensor<double>(Shape{1, 1}, true)};
  p[0].grad() << 3.0, 0.0;
  p[1].grad() << 4.0;
  const double norm = clip_grad_norm(std::span<Tensor<double>>(p), 1.0);
  EXPECT_DOUBLE_EQ(norm, 5.0);
  EXPECT_NEAR(p[0].grad()(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(p[1].grad()(0, 0), 0.8, 1e-12);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  TrainConfig c;
  c.learning_rate = 0.1;
  c.weight_decay = 0.0;
  std::vector<Tensor<double>> p = {Tensor<double>(Shape{1, 2}, true)};
  p[0].value() << 1.0, -1.0;
  p[0].grad() << 0.5, -2.0;
  AdamW<double> opt(c, p);
  opt.step(p);
  // m̂ = g and v̂ = g², so each coordinate moves lr·sign(g) up to eps.
  EXPECT_NEAR(p[0].value()(0, 0), 0.9, 1e-6);
  EXPECT_NEAR(p[0].value()(0, 1), -0.9, 1e-6);
}

TEST(AdamW, DecoupledWeightDecay) {
  TrainConfig c;
  c.learning_rate = 0.1;
  c.weight_decay = 0.5;
  std::vector<Tensor<double>> p = {Tensor<double>(Shape{1, 1}, true)};
  p[0].value() << 2.0;
  AdamW<double> opt(c, p);
  opt.step(p);  // no gradient: only the decay applies
  EXPECT_NEAR(p[0].value()(0, 0), 2.0 * (1 - 0.05), 1e-12);
}

TEST(Loss, ExampleNllMatchesFullCrossEntropy) {
  const auto d = tiny_data(2);
  auto m = model_for(d);
  const auto& ex = d.encoded[0];
  const auto nll = example_nll(m, ex).item();
  const auto logits = forward(m, std::span<const TokenId>(ex.tokens)).logits;
  double total = 0.0;
  int count = 0;
  for (std::size_t i = 1; i < ex.tokens.size(); ++i) {
    if (!ex.loss_mask[i]) continue;
    const auto row = logits.value().row(static_cast<Index>(i - 1)).cast<double>();
    const double lse = row.maxCoeff() + std::log((row.array() - row.maxCoeff()).exp().sum());
    total += lse - row(ex.tokens[i]);
    ++count;
  }
  EXPECT_NEAR(nll, total / count, 1e-4);
}

TEST(Loss, CompareWeightsByTargets) {
  const auto d = tiny_data(3);
  auto m = model_for(d);
  ModelObjective<float> obj(m);
  const auto batch = std::span<const EncodedExample>(d.encoded);
  double sum = 0.0, n = 0.0;
  for (const auto& ex : d.encoded) {
    sum += example_nll(m, ex).item() * static_cast<double>(ex.target_count());
    n += static_cast<double>(ex.target_count());
  }
  EXPECT_NEAR(compute_loss(m, batch).item(), sum / n, 1e-4);
  EXPECT_NEAR(evaluate_loss(obj, batch), sum / n, 1e-4);
}

TEST(Train, LossDecreasesAndBestIsRestored) {
  const auto d = tiny_data(24);
  auto m = model_for(d);
  const auto tr = std::span<const EncodedExample>(d.encoded).first(20);
  const auto va = std::span<const EncodedExample>(d.encoded).subspan(20);
  ModelObjective<float> obj(m);
  const double before = evaluate_loss(obj, tr);
  const auto h = train(m, tr, va, quick_config(4));
  EXPECT_EQ(h.train_loss.size(), 4u);
  EXPECT_LT(evaluate_loss(obj, tr), before);
  EXPECT_NEAR(evaluate_loss(obj, va), h.best_val_loss, 1e-5);
  EXPECT_EQ(h.steps, 4 * 5);
}

TEST(Train, DeterministicAcrossRuns) {
  const auto d = tiny_data(12);
  const auto tr = std::span<const EncodedExample>(d.encoded).first(8);
  const auto va = std::span<const EncodedExample>(d.encoded).subspan(8);
  auto a = model_for(d);
  auto b = model_for(d);
  train(a, tr, va, quick_config(2));
  train(b, tr, va, quick_config(2));
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].tensor.value(), pb[i].tensor.value());
}

TEST(Train, FrozenLayersDoNotMove) {
  const auto d = tiny_data(12);
  const auto tr = std::span<const EncodedExample>(d.encoded).first(8);
  const auto va = std::span<const EncodedExample>(d.encoded).subspan(8);
  auto m = model_for(d);
  const auto before = m.clone();
  auto c = quick_config(2);
  c.trainable_layers = std::vector<int>{1};
  train(m, tr, va, c);
  const auto pa = before.parameters();
  const auto pb = m.parameters();
  bool layer1_moved = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].layer == 1) {
      layer1_moved |= pa[i].tensor.value() != pb[i].tensor.value();
    } else {
      EXPECT_EQ(pa[i].tensor.value(), pb[i].tensor.value()) << pa[i].name;
    }
  }
  EXPECT_TRUE(layer1_moved);
  c.trainable_layers = std::vector<int>{5};
  EXPECT_THROW(train(m, tr, va, c), ConfigError);
}

TEST(Train, DivergenceIsTrainingError) {
  const auto d = tiny_data(8);
  const auto tr = std::span<const EncodedExample>(d.encoded).first(6);
  const auto va = std::span<const EncodedExample>(d.encoded).subspan(6);
  auto m = model_for(d);
  m.token_embedding.value()(4, 0) = std::numeric_limits<float>::quiet_NaN();
  try {
    train(m, tr, va, quick_config(1));
    FAIL() << "expected a divergence error";
  } catch (const Error& e) {
    EXPECT_EQ(exit_code(e.kind()), 4) << e.what();
  }
}

TEST(Train, EmptySetsAreDegenerate) {
  const auto d = tiny_data(4);
  auto m = model_for(d);
  EXPECT_THROW(train(m, std::span<const EncodedExample>(d.encoded), {}, quick_config(1)),
               DegenerateInputError);
}

TEST(History, CsvHasOneRowPerEpoch) {
  TempDir dir("history");
  TrainHistory h;
  h.train_loss = {2.0, 1.5};
  h.val_loss = {2.1, 1.7};
  write_history_csv(h, dir / "h.csv");
  std::ifstream in(dir / "h.csv");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 3);
}
