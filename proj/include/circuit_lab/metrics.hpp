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

// Differential metrics between two trace sets captured on the same inputs.
// All quantities are in nats and accumulated in 64-bit, in fixed example and
// row order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "circuit_lab/trace.hpp"

namespace circuit_lab {

inline constexpr double kKlSmoothing = 1e-10;

struct HeadMatrix {
  std::string metric;
  std::vector<std::string> sources;
  Eigen::MatrixXd values;  // [n_layers x n_heads]
};

struct LayerVector {
  std::string metric;
  Eigen::VectorXd values;  // [n_layers]
};

struct NeuronDelta {
  int layer = 0;
  int neuron = 0;
  double before = 0.0;
  double after = 0.0;
  double delta = 0.0;

  bool operator==(const NeuronDelta&) const = default;
};

enum class KlDirection { kPreToPost, kPostToPre };
enum class ActivationSource { kMlpHidden, kResidual };

const char* activation_source_name(ActivationSource s);
ActivationSource parse_activation_source(std::string_view name);

// p and q must be distributions of equal length. Both are smoothed by eps and
// renormalized before summing.
double kl_divergence(std::span<const double> p, std::span<const double> q,
                     double eps = kKlSmoothing);

// Shannon entropy with 0 log 0 = 0.
double entropy(std::span<const double> p);

HeadMatrix attention_kl(const TraceSet& pre, const TraceSet& post,
                        KlDirection direction = KlDirection::kPreToPost);

HeadMatrix attention_entropy(const TraceSet& set);

struct EntropyDiff {
  HeadMatrix diff;  // post - pre
  double fraction_negative = 0.0;
};

EntropyDiff entropy_diff(const TraceSet& pre, const TraceSet& post);
EntropyDiff entropy_diff(const HeadMatrix& pre, const HeadMatrix& post);

LayerVector activation_magnitude(const TraceSet& set,
                                 ActivationSource source = ActivationSource::kMlpHidden);

// Percent change of post relative to pre per layer; 0 where pre is 0.
Eigen::VectorXd percent_change(const LayerVector& pre, const LayerVector& post);

// Ranked by |delta| descending, then by neuron index.
std::vector<NeuronDelta> neuron_deltas(const TraceSet& pre, const TraceSet& post,
                                       int layer, int top_n = 50);

struct TracePair {
  const TraceSet* pre = nullptr;
  const TraceSet* post = nullptr;
  std::string label;
};

struct LabeledLayerVector {
  std::string label;
  LayerVector values;
};

// Head-mean of the KL matrix per layer.
LayerVector layer_mean(const HeadMatrix& m);

std::vector<LabeledLayerVector> layer_kl_compare(const std::vector<TracePair>& pairs,
                                                 KlDirection direction = KlDirection::kPreToPost);

struct Pca3 {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;  // [3 x d], orthonormal rows
  Eigen::MatrixXd coords;      // [points x 3]
  Eigen::Vector3d explained;   // variance along each component
};

Pca3 pca3_project(const Eigen::MatrixXd& latents, int iterations = 1000);

struct DiffOptions {
  KlDirection direction = KlDirection::kPreToPost;
  ActivationSource source = ActivationSource::kMlpHidden;
  int top_n = 50;
};

struct DiffReport {
  HeadMatrix kl;
  HeadMatrix entropy_pre, entropy_post, entropy_diff;
  double fraction_decreased_entropy = 0.0;
  LayerVector actmag_pre, actmag_post;
  // First entry is the pair the report was computed from.
  std::vector<LabeledLayerVector> layer_kl;
  std::vector<std::vector<NeuronDelta>> neuron_deltas;  // one list per layer
  nlohmann::json metadata = nlohmann::json::object();

  int n_layers() const { return static_cast<int>(kl.values.rows()); }
  int n_heads() const { return static_cast<int>(kl.values.cols()); }
};

DiffReport compute_diff_report(const TraceSet& pre, const TraceSet& post,
                               const DiffOptions& options = {});

// Files a report directory must contain for `n_layers` layers.
std::vector<std::string> report_files(int n_layers);

void save_report(const DiffReport& report, const std::filesystem::path& dir);
// Throws ReportError listing every missing file.
DiffReport load_report(const std::filesystem::path& dir);

}  // namespace circuit_lab
