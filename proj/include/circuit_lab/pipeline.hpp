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

// End-to-end differential analysis run: build a base model, adapt it, trace
// both on held-out inputs, compare, score, and locate the layers that moved.

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "circuit_lab/circuit.hpp"
#include "circuit_lab/corpus.hpp"
#include "circuit_lab/lora.hpp"
#include "circuit_lab/metrics.hpp"
#include "circuit_lab/model.hpp"
#include "circuit_lab/report.hpp"
#include "circuit_lab/rouge.hpp"
#include "circuit_lab/trace.hpp"
#include "circuit_lab/training.hpp"

namespace circuit_lab {

struct PipelineConfig {
  SyntheticSpec corpus;
  // When set, examples come from this JSONL file instead of the generator.
  std::optional<std::filesystem::path> corpus_path;
  std::array<double, 3> split = {0.8, 0.1, 0.1};
  // vocab_size is replaced by the tokenizer size.
  ModelConfig model;
  // Language-model pretraining on articles alone produces the base model.
  TrainConfig pretrain;
  TrainConfig finetune;
  LoraConfig lora;
  TrainConfig lora_train;
  CircuitOptions circuit;
  DiffOptions diff;
  std::size_t trace_examples = 64;
  std::size_t eval_examples = 100;
  bool skip_lora = false;
  std::uint64_t seed = 0;

  PipelineConfig();
  void validate() const;
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);

  // Propagates `seed` into every stage that draws randomness.
  void set_seed(std::uint64_t s);
};

struct PreparedData {
  Tokenizer tokenizer;
  CorpusSplits splits;
  std::vector<EncodedExample> train, val, test;  // formatted task
  std::vector<EncodedExample> lm_train, lm_val;  // articles only
};

PreparedData prepare_data(const PipelineConfig& config);

void save_tokenizer(const Tokenizer& tokenizer, const std::filesystem::path& path);
Tokenizer load_tokenizer(const std::filesystem::path& path);

struct StageResult {
  GptModel<float> model;
  TrainHistory history;
};

StageResult pretrain_base(const PipelineConfig& config, const PreparedData& data);

// Fine-tunes a copy of `base` on the formatted task. `layers` restricts
// updates to those blocks.
StageResult finetune_model(const GptModel<float>& base, const TrainConfig& train,
                           const PreparedData& data,
                           std::optional<std::vector<int>> layers = std::nullopt);

struct LoraResult {
  AdaptedModel<float> adapted;
  TrainHistory history;
};

LoraResult train_adapters(const GptModel<float>& base, const LoraConfig& lora,
                          const TrainConfig& train, const PreparedData& data);

// Leading test examples used for tracing, at most `limit` of them.
std::vector<EncodedExample> trace_inputs(const PreparedData& data, std::size_t limit);

TraceConfig pipeline_trace_config();

// Mean final hidden state per example; one row per example.
template <typename Scalar>
Eigen::MatrixXd pooled_latents(const GptModel<Scalar>& model,
                               const std::vector<EncodedExample>& inputs,
                               const ProjectionHook<Scalar>* hook = nullptr);

struct PipelineOutcome {
  RunManifest manifest;
  DiffReport report;
  CircuitSpec circuit;
  ScoreTable rouge;
};

using StageLogger = std::function<void(const std::string&)>;

// Runs every stage, writing artifacts under `out`. On failure the manifest is
// written with the failing stage and the error is rethrown.
PipelineOutcome run_pipeline(const PipelineConfig& config, const std::filesystem::path& out,
                             const StageLogger& log = {});

// Relative paths of the artifacts a complete run leaves under its directory.
std::vector<std::string> pipeline_artifacts(const PipelineConfig& config);

}  // namespace circuit_lab
