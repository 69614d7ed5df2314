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

#include "circuit_lab/circuit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "circuit_lab/error.hpp"

namespace circuit_lab {

namespace {

Eigen::VectorXd zscore(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  const double var = (v.array() - mean).square().mean();
  if (var <= 0.0) return Eigen::VectorXd::Zero(v.size());
  return (v.array() - mean) / std::sqrt(var);
}

// Linear-interpolation quantile of the values.
double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace

const char* circuit_score_name(CircuitScore s) {
  return s == CircuitScore::kKl ? "kl" : "combined";
}

CircuitScore parse_circuit_score(std::string_view name) {
  if (name == "kl") return CircuitScore::kKl;
  if (name == "combined") return CircuitScore::kCombined;
  throw ConfigError("unknown circuit score '" + std::string(name) + "' (expected kl or combined)");
}

std::vector<int> CircuitSpec::layer_indices() const {
  std::vector<int> out;
  for (const auto& l : layers) out.push_back(l.layer);
  return out;
}

Eigen::VectorXd layer_scores(const DiffReport& report, CircuitScore score) {
  const Eigen::VectorXd kl = layer_mean(report.kl).values;
  if (score == CircuitScore::kKl) return kl;
  const Eigen::VectorXd act = (report.actmag_post.values - report.actmag_pre.values).cwiseAbs();
  return zscore(kl) + zscore(act);
}

CircuitSpec identify_circuit(const DiffReport& report, const CircuitOptions& options) {
  const int n_layers = report.n_layers();
  if (n_layers == 0 || report.kl.values.size() == 0) {
    throw ContractError("identify_circuit: report has no KL matrix");
  }
  if (report.actmag_pre.values.size() != n_layers || report.actmag_post.values.size() != n_layers) {
    throw ContractError("identify_circuit: report has no activation magnitudes");
  }
  if (options.k < 1 || options.k > n_layers) {
    throw ConfigError("circuit size k=" + std::to_string(options.k) + " must be in [1, " +
                      std::to_string(n_layers) + "]");
  }
  if (!(options.head_quantile >= 0.0 && options.head_quantile <= 1.0)) {
    throw ConfigError("head quantile must be in [0, 1]");
  }
  if (!report.kl.values.allFinite()) throw NumericError("identify_circuit: non-finite KL values");
  if ((report.kl.values.array() == 0.0).all()) {
    throw DegenerateInputError("no signal: all layer scores are zero");
  }

  const Eigen::VectorXd scores = layer_scores(report, options.score);
  std::vector<int> order(static_cast<std::size_t>(n_layers));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });

  CircuitSpec spec;
  spec.score = options.score;
  spec.provenance = report.metadata;
  for (int i = 0; i < options.k; ++i) {
    const int l = order[static_cast<std::size_t>(i)];
    spec.layers.push_back({l, scores[l]});
    std::vector<NeuronDelta> neurons;
    if (static_cast<std::size_t>(l) < report.neuron_deltas.size()) {
      const auto& src = report.neuron_deltas[static_cast<std::size_t>(l)];
      neurons.assign(src.begin(),
                     src.begin() + std::min<std::ptrdiff_t>(options.top_neurons,
                                                            static_cast<std::ptrdiff_t>(src.size())));
    }
    spec.neurons.push_back(std::move(neurons));
  }

  const Eigen::MatrixXd& kl = report.kl.values;
  spec.head_threshold =
      quantile(std::vector<double>(kl.data(), kl.data() + kl.size()), options.head_quantile);
  const std::vector<int> chosen = spec.layer_indices();
  for (Eigen::Index l = 0; l < kl.rows(); ++l) {
    for (Eigen::Index h = 0; h < kl.cols(); ++h) {
      if (kl(l, h) >= spec.head_threshold) {
        const bool in = std::find(chosen.begin(), chosen.end(), l) != chosen.end();
        spec.heads.push_back({static_cast<int>(l), static_cast<int>(h), kl(l, h), !in});
      }
    }
  }
  return spec;
}

LoraConfig to_lora_targets(const CircuitSpec& spec, LoraConfig base) {
  if (spec.layers.empty()) throw ConfigError("circuit spec has no layers");
  std::vector<int> layers = spec.layer_indices();
  std::sort(layers.begin(), layers.end());
  base.target_layers = std::move(layers);
  return base;
}

nlohmann::json circuit_to_json(const CircuitSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) layers.push_back({{"layer", l.layer}, {"score", l.score}});
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : spec.heads) {
    heads.push_back({{"layer", h.layer}, {"head", h.head}, {"kl", h.kl}, {"auxiliary", h.auxiliary}});
  }
  nlohmann::json neurons = nlohmann::json::array();
  for (std::size_t i = 0; i < spec.neurons.size(); ++i) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& n : spec.neurons[i]) {
      entries.push_back(
          {{"neuron", n.neuron}, {"before", n.before}, {"after", n.after}, {"delta", n.delta}});
    }
    neurons.push_back({{"layer", spec.layers[i].layer}, {"entries", entries}});
  }
  return {{"index_base", 0},
          {"score", circuit_score_name(spec.score)},
          {"layers", layers},
          {"head_threshold", spec.head_threshold},
          {"heads", heads},
          {"neurons", neurons},
          {"provenance", spec.provenance}};
}

CircuitSpec circuit_from_json(const nlohmann::json& j) {
  CircuitSpec spec;
  try {
    spec.score = parse_circuit_score(j.at("score").get<std::string>());
    for (const auto& l : j.at("layers")) {
      spec.layers.push_back({l.at("layer").get<int>(), l.at("score").get<double>()});
    }
    spec.head_threshold = j.at("head_threshold").get<double>();
    for (const auto& h : j.at("heads")) {
      spec.heads.push_back({h.at("layer").get<int>(), h.at("head").get<int>(),
                            h.at("kl").get<double>(), h.at("auxiliary").get<bool>()});
    }
    for (const auto& block : j.at("neurons")) {
      const int layer = block.at("layer").get<int>();
      auto& list = spec.neurons.emplace_back();
      for (const auto& n : block.at("entries")) {
        list.push_back({layer, n.at("neuron").get<int>(), n.at("before").get<double>(),
                        n.at("after").get<double>(), n.at("delta").get<double>()});
      }
    }
    spec.provenance = j.value("provenance", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed circuit spec: ") + e.what());
  }
  if (spec.neurons.size() != spec.layers.size()) {
    throw ConfigError("circuit spec neuron tables do not match its layers");
  }
  return spec;
}

void save_circuit(const CircuitSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ReportError("cannot write " + path.string());
  out << circuit_to_json(spec).dump(2) << '\n';
}

CircuitSpec load_circuit(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open circuit spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("circuit spec " + path.string() + " is not valid JSON: " + e.what());
  }
  return circuit_from_json(j);
}

}  // namespace circuit_lab
