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

// Fine-tuning on the masked next-token objective with AdamW, global-norm
// clipping and early stopping on validation loss.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "circuit_lab/corpus.hpp"
#include "circuit_lab/model.hpp"
#include "circuit_lab/tensor.hpp"

namespace circuit_lab {

struct TrainConfig {
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  int batch_size = 16;
  int max_epochs = 10;
  int patience = 6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double grad_clip_norm = 1.0;  // <= 0 disables clipping
  double min_delta = 1e-5;      // smallest val-loss decrease counted as progress
  // When set, only the block parameters of these layers are updated.
  std::optional<std::vector<int>> trainable_layers;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int stop_epoch = 0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::int64_t steps = 0;
  double wall_seconds = 0.0;
};

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

// Patience-based stopping: an epoch improves when its loss is at least
// min_delta below the best so far; training stops once `patience`
// consecutive epochs fail to improve.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta)
      : patience_(patience), min_delta_(min_delta) {}

  // Returns true when this epoch is the new best.
  bool update(double loss);
  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
  double best_loss() const { return best_; }
  int epochs_seen() const { return epochs_; }

 private:
  int patience_;
  double min_delta_;
  int epochs_ = 0;
  int stale_ = 0;
  int best_epoch_ = 0;
  double best_ = 0.0;
};

// Global L2 norm over the gradients of `params`; rescales them to `max_norm`
// when larger. Returns the norm before clipping.
template <typename Scalar>
double clip_grad_norm(std::span<Tensor<Scalar>> params, double max_norm);

// Bias-corrected Adam moments with decoupled weight decay:
//   θ ← θ·(1 − lr·wd) − lr·m̂ / (√v̂ + ε)
template <typename Scalar>
class AdamW {
 public:
  AdamW(const TrainConfig& config, std::span<const Tensor<Scalar>> params);

  void step(std::span<Tensor<Scalar>> params);
  std::int64_t steps() const { return step_; }
  const std::vector<Matrix<Scalar>>& first_moments() const { return m_; }
  const std::vector<Matrix<Scalar>>& second_moments() const { return v_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  std::int64_t step_ = 0;
  std::vector<Matrix<Scalar>> m_;
  std::vector<Matrix<Scalar>> v_;
};

// A differentiable per-example loss over a set of trainable tensors.
template <typename Scalar>
class Objective {
 public:
  virtual ~Objective() = default;
  // Tensors the optimizer updates, in a fixed order.
  virtual std::vector<Tensor<Scalar>> trainable() const = 0;
  // Mean next-token NLL over the example's targets. Records on the active
  // tape when there is one.
  virtual Tensor<Scalar> example_loss(const EncodedExample& example) const = 0;
  // Deep copy used by parallel workers; trainable() order must match.
  virtual std::unique_ptr<Objective> replicate() const = 0;
};

// Next-token NLL of `model` on the example's masked targets, computing output
// logits only at target rows.
template <typename Scalar>
Tensor<Scalar> example_nll(const GptModel<Scalar>& model, const EncodedExample& example,
                           const ProjectionHook<Scalar>* hook = nullptr);

// Objective over the parameters of a model that have requires_grad set.
template <typename Scalar>
class ModelObjective final : public Objective<Scalar> {
 public:
  explicit ModelObjective(GptModel<Scalar>& model) : model_(&model) {}

  std::vector<Tensor<Scalar>> trainable() const override;
  Tensor<Scalar> example_loss(const EncodedExample& example) const override {
    return example_nll(*model_, example);
  }
  std::unique_ptr<Objective<Scalar>> replicate() const override;

 private:
  std::shared_ptr<GptModel<Scalar>> owned_;
  GptModel<Scalar>* model_;
};

// Mean NLL over every target of every example in `batch` (examples weighted
// by their target counts). Records on the active tape when there is one.
template <typename Scalar>
Tensor<Scalar> compute_loss(const Objective<Scalar>& objective,
                            std::span<const EncodedExample> batch);

template <typename Scalar>
Tensor<Scalar> compute_loss(const GptModel<Scalar>& model,
                            std::span<const EncodedExample> batch);

// Same quantity as compute_loss, evaluated without a tape in fixed example
// order with double accumulation.
template <typename Scalar>
double evaluate_loss(const Objective<Scalar>& objective,
                     std::span<const EncodedExample> examples);

using EpochCallback = std::function<void(int epoch, const TrainHistory&)>;

// Shuffled mini-batch epochs; per-example gradients are reduced in example
// order, so results do not depend on the worker count. Best-validation
// parameters are restored at the end.
template <typename Scalar>
TrainHistory fit(Objective<Scalar>& objective, std::span<const EncodedExample> train,
                 std::span<const EncodedExample> val, const TrainConfig& config,
                 const EpochCallback& on_epoch = {});

// Applies config.trainable_layers (all parameters otherwise) and fits.
template <typename Scalar>
TrainHistory train(GptModel<Scalar>& model, std::span<const EncodedExample> train_set,
                   std::span<const EncodedExample> val_set, const TrainConfig& config,
                   const EpochCallback& on_epoch = {});

}  // namespace circuit_lab
