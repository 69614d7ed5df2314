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

// Selects the layers whose attention moved most between two model states and
// turns them into adapter targets.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "circuit_lab/lora.hpp"
#include "circuit_lab/metrics.hpp"

namespace circuit_lab {

enum class CircuitScore { kKl, kCombined };

const char* circuit_score_name(CircuitScore s);
CircuitScore parse_circuit_score(std::string_view name);

struct CircuitLayer {
  int layer = 0;
  double score = 0.0;
  bool operator==(const CircuitLayer&) const = default;
};

struct CircuitHead {
  int layer = 0;
  int head = 0;
  double kl = 0.0;
  bool auxiliary = false;  // head lies outside the selected layers
  bool operator==(const CircuitHead&) const = default;
};

struct CircuitSpec {
  std::vector<CircuitLayer> layers;  // by score, descending
  std::vector<CircuitHead> heads;
  double head_threshold = 0.0;
  std::vector<std::vector<NeuronDelta>> neurons;  // parallel to `layers`
  CircuitScore score = CircuitScore::kKl;
  nlohmann::json provenance = nlohmann::json::object();

  std::vector<int> layer_indices() const;
  bool operator==(const CircuitSpec&) const = default;
};

struct CircuitOptions {
  int k = 3;
  double head_quantile = 0.9;
  CircuitScore score = CircuitScore::kKl;
  int top_neurons = 50;
};

// Per-layer scores used for ranking: head-mean KL, or in combined mode the
// sum of the z-scores of that and of |delta ActMag|.
Eigen::VectorXd layer_scores(const DiffReport& report, CircuitScore score);

CircuitSpec identify_circuit(const DiffReport& report, const CircuitOptions& options = {});

LoraConfig to_lora_targets(const CircuitSpec& spec, LoraConfig base = {});

nlohmann::json circuit_to_json(const CircuitSpec& spec);
CircuitSpec circuit_from_json(const nlohmann::json& j);
void save_circuit(const CircuitSpec& spec, const std::filesystem::path& path);
CircuitSpec load_circuit(const std::filesystem::path& path);

}  // namespace circuit_lab
