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

// Low-rank adapters on attention projections: W·x + (alpha/r)·B·(A·x) with
// the base model frozen.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"

#include "circuit_lab/corpus.hpp"
#include "circuit_lab/model.hpp"
#include "circuit_lab/rng.hpp"
#include "circuit_lab/trace.hpp"
#include "circuit_lab/training.hpp"

namespace circuit_lab {

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;
  std::vector<Projection> projections = {Projection::kQuery, Projection::kValue};
  // All layers when unset.
  std::optional<std::vector<int>> target_layers;
  double learning_rate = 5e-4;
  int batch_size = 16;
  std::uint64_t seed = 0;

  double scale() const { return alpha / rank; }
  void validate(const ModelConfig& model) const;
  // Target layers with the default (all layers) resolved.
  std::vector<int> layers(const ModelConfig& model) const;

  nlohmann::json to_json() const;
  static LoraConfig from_json(const nlohmann::json& j);
};

template <typename Scalar>
struct LoraAdapter {
  int layer = 0;
  Projection projection = Projection::kQuery;
  Tensor<Scalar> a;  // [r x d_in]
  Tensor<Scalar> b;  // [d_out x r]
  Scalar scale = 1;
};

template <typename Scalar>
struct AdaptedModel {
  GptModel<Scalar> base;
  std::vector<LoraAdapter<Scalar>> adapters;
  LoraConfig config;

  AdaptedModel() = default;
  AdaptedModel(AdaptedModel&&) noexcept = default;
  AdaptedModel& operator=(AdaptedModel&&) noexcept = default;

  AdaptedModel clone() const;
  const LoraAdapter<Scalar>* find(int layer, Projection projection) const;
  // Splices every adapter into a forward pass.
  ProjectionHook<Scalar> hook() const;
};

// Clones and freezes `model`, then adds adapters with A ~ Normal(0, 0.02) and
// B = 0 on every (target layer, projection) pair, so the adapted model starts
// out identical to the base.
template <typename Scalar>
AdaptedModel<Scalar> attach(const GptModel<Scalar>& model, const LoraConfig& config,
                            Rng& rng);

template <typename Scalar>
ForwardResult<Scalar> adapted_forward(const AdaptedModel<Scalar>& adapted,
                                      std::span<const TokenId> tokens,
                                      const TraceConfig* trace = nullptr);

// Folds W ← W + scale·B·A into a plain model.
template <typename Scalar>
GptModel<Scalar> merge(const AdaptedModel<Scalar>& adapted);

// Σ over adapters of r·(d_in + d_out).
template <typename Scalar>
std::size_t count_trainable(const AdaptedModel<Scalar>& adapted);

std::size_t count_lora_params(const ModelConfig& model, const LoraConfig& config);

template <typename Scalar>
class LoraObjective final : public Objective<Scalar> {
 public:
  explicit LoraObjective(AdaptedModel<Scalar>& adapted) : adapted_(&adapted) {}

  std::vector<Tensor<Scalar>> trainable() const override;
  Tensor<Scalar> example_loss(const EncodedExample& example) const override;
  std::unique_ptr<Objective<Scalar>> replicate() const override;

 private:
  std::shared_ptr<AdaptedModel<Scalar>> owned_;
  AdaptedModel<Scalar>* adapted_;
};

// `config` with the adapter learning rate, batch size and seed applied.
TrainConfig lora_train_config(const LoraConfig& lora, TrainConfig config);

// Same loop as train(); only adapter factors are updated.
template <typename Scalar>
TrainHistory train_lora(AdaptedModel<Scalar>& adapted,
                        std::span<const EncodedExample> train_set,
                        std::span<const EncodedExample> val_set,
                        const TrainConfig& config, const EpochCallback& on_epoch = {});

template <typename Scalar>
TraceSet trace_corpus(const AdaptedModel<Scalar>& adapted,
                      const std::vector<EncodedExample>& corpus,
                      const TraceConfig& config, const std::string& model_tag);

// "MICLLORA" file: u32 version, u32-prefixed JSON (adapter config and base
// model config), u32 tensor count, then tensors as in checkpoints
// (layers.<l>.attn.<p>.lora_a / lora_b).
template <typename Scalar>
void save_adapters(const AdaptedModel<Scalar>& adapted, const std::filesystem::path& path);

template <typename Scalar>
AdaptedModel<Scalar> load_adapters(const GptModel<Scalar>& base,
                                   const std::filesystem::path& path);

inline constexpr std::uint32_t kAdapterFormatVersion = 1;

}  // namespace circuit_lab
