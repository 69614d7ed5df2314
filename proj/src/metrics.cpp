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

#include "circuit_lab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "circuit_lab/csv.hpp"
#include "circuit_lab/error.hpp"

namespace circuit_lab {

namespace {

// Smoothed KL over two rows already known to be valid distributions.
double kl_kernel(std::span<const double> p, std::span<const double> q, double eps) {
  const double n = static_cast<double>(p.size());
  double zp = 0.0, zq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    zp += p[i];
    zq += q[i];
  }
  zp += eps * n;
  zq += eps * n;
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = (p[i] + eps) / zp;
    const double qi = (q[i] + eps) / zq;
    kl += pi * std::log(pi / qi);
  }
  return std::max(kl, 0.0);
}

void require_attention(const TraceSet& set) {
  if (!set.config.capture_attention) {
    throw ConfigError("trace set '" + set.model_tag + "' has no attention captured");
  }
  if (set.traces.empty()) throw DegenerateInputError("trace set '" + set.model_tag + "' is empty");
}

HeadMatrix make_heads(const TraceSet& set, std::string metric) {
  HeadMatrix m;
  m.metric = std::move(metric);
  m.values = Eigen::MatrixXd::Zero(set.n_layers, set.n_heads);
  return m;
}

std::size_t total_rows(const TraceSet& set) {
  std::size_t n = 0;
  for (const auto& t : set.traces) n += static_cast<std::size_t>(t.query_rows);
  return n;
}

// Mean activation per neuron of one layer, signed.
Eigen::VectorXd neuron_means(const TraceSet& set, int layer) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(set.d_mlp);
  for (const auto& t : set.traces) {
    for (int r = 0; r < t.query_rows; ++r) {
      const auto row = t.mlp_row(layer, r);
      for (int n = 0; n < set.d_mlp; ++n) sum[n] += row[static_cast<std::size_t>(n)];
    }
  }
  return sum / static_cast<double>(total_rows(set));
}

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << v;
  return out.str();
}

}  // namespace

const char* activation_source_name(ActivationSource s) {
  return s == ActivationSource::kMlpHidden ? "mlp" : "residual";
}

ActivationSource parse_activation_source(std::string_view name) {
  if (name == "mlp") return ActivationSource::kMlpHidden;
  if (name == "residual") return ActivationSource::kResidual;
  throw ConfigError("unknown activation source '" + std::string(name) +
                    "' (expected mlp or residual)");
}

double kl_divergence(std::span<const double> p, std::span<const double> q, double eps) {
  if (p.size() != q.size()) {
    throw ShapeError("kl_divergence: lengths " + std::to_string(p.size()) + " and " +
                     std::to_string(q.size()) + " differ");
  }
  if (p.empty()) throw ShapeError("kl_divergence: empty distributions");
  for (auto dist : {p, q}) {
    double total = 0.0;
    for (double v : dist) {
      if (!(v >= 0.0)) throw ContractError("kl_divergence: negative or NaN probability");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError("kl_divergence: probabilities sum to " + format_real(total));
    }
  }
  return kl_kernel(p, q, eps);
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

HeadMatrix attention_kl(const TraceSet& pre, const TraceSet& post, KlDirection direction) {
  pre.check_comparable(post);
  require_attention(pre);
  require_attention(post);
  HeadMatrix m = make_heads(pre, "attention_kl");
  m.sources = direction == KlDirection::kPreToPost
                  ? std::vector<std::string>{pre.model_tag, post.model_tag}
                  : std::vector<std::string>{post.model_tag, pre.model_tag};
  const double rows = static_cast<double>(total_rows(pre));
  for (int l = 0; l < pre.n_layers; ++l) {
    for (int h = 0; h < pre.n_heads; ++h) {
      double sum = 0.0;
      for (std::size_t e = 0; e < pre.traces.size(); ++e) {
        const auto& a = pre.traces[e];
        const auto& b = post.traces[e];
        for (int r = 0; r < a.query_rows; ++r) {
          const auto keys = static_cast<std::size_t>(a.first_query() + r + 1);
          const auto p = a.attention_row(l, h, r).first(keys);
          const auto q = b.attention_row(l, h, r).first(keys);
          sum += direction == KlDirection::kPreToPost ? kl_kernel(p, q, kKlSmoothing)
                                                      : kl_kernel(q, p, kKlSmoothing);
        }
      }
      m.values(l, h) = sum / rows;
    }
  }
  return m;
}

HeadMatrix attention_entropy(const TraceSet& set) {
  require_attention(set);
  HeadMatrix m = make_heads(set, "attention_entropy");
  m.sources = {set.model_tag};
  const double rows = static_cast<double>(total_rows(set));
  for (int l = 0; l < set.n_layers; ++l) {
    for (int h = 0; h < set.n_heads; ++h) {
      double sum = 0.0;
      for (const auto& t : set.traces) {
        for (int r = 0; r < t.query_rows; ++r) sum += entropy(t.attention_row(l, h, r));
      }
      m.values(l, h) = sum / rows;
    }
  }
  return m;
}

EntropyDiff entropy_diff(const HeadMatrix& pre, const HeadMatrix& post) {
  if (pre.values.rows() != post.values.rows() || pre.values.cols() != post.values.cols()) {
    throw ComparisonError("entropy matrices differ in shape");
  }
  EntropyDiff out;
  out.diff.metric = "entropy_diff";
  out.diff.sources = {pre.sources.empty() ? "" : pre.sources.front(),
                      post.sources.empty() ? "" : post.sources.front()};
  out.diff.values = post.values - pre.values;
  const auto negative = (out.diff.values.array() < 0.0).count();
  out.fraction_negative =
      static_cast<double>(negative) / static_cast<double>(out.diff.values.size());
  return out;
}

EntropyDiff entropy_diff(const TraceSet& pre, const TraceSet& post) {
  pre.check_comparable(post);
  return entropy_diff(attention_entropy(pre), attention_entropy(post));
}

LayerVector activation_magnitude(const TraceSet& set, ActivationSource source) {
  const bool mlp = source == ActivationSource::kMlpHidden;
  if (mlp ? !set.config.capture_mlp_hidden : !set.config.capture_residual) {
    throw ConfigError(std::string("trace set '") + set.model_tag + "' has no " +
                      activation_source_name(source) + " activations captured");
  }
  if (set.traces.empty()) throw DegenerateInputError("trace set '" + set.model_tag + "' is empty");
  const int width = mlp ? set.d_mlp : set.d_model;
  LayerVector v;
  v.metric = std::string("actmag_") + activation_source_name(source);
  v.values = Eigen::VectorXd::Zero(set.n_layers);
  const double count = static_cast<double>(total_rows(set)) * width;
  for (int l = 0; l < set.n_layers; ++l) {
    double sum = 0.0;
    for (const auto& t : set.traces) {
      for (int r = 0; r < t.query_rows; ++r) {
        for (double z : mlp ? t.mlp_row(l, r) : t.residual_row(l, r)) sum += std::abs(z);
      }
    }
    v.values[l] = sum / count;
  }
  return v;
}

Eigen::VectorXd percent_change(const LayerVector& pre, const LayerVector& post) {
  Eigen::VectorXd out(pre.values.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out[i] = pre.values[i] == 0.0 ? 0.0
                                  : 100.0 * (post.values[i] - pre.values[i]) / pre.values[i];
  }
  return out;
}

std::vector<NeuronDelta> neuron_deltas(const TraceSet& pre, const TraceSet& post, int layer,
                                       int top_n) {
  pre.check_comparable(post);
  if (layer < 0 || layer >= pre.n_layers) {
    throw ConfigError("layer " + std::to_string(layer) + " outside [0, " +
                      std::to_string(pre.n_layers) + ")");
  }
  if (top_n < 1) throw ConfigError("top_n must be >= 1");
  if (!pre.config.capture_mlp_hidden || !post.config.capture_mlp_hidden) {
    throw ConfigError("neuron deltas need MLP activations in both trace sets");
  }
  if (pre.traces.empty()) throw DegenerateInputError("trace sets are empty");
  const Eigen::VectorXd before = neuron_means(pre, layer);
  const Eigen::VectorXd after = neuron_means(post, layer);
  std::vector<NeuronDelta> all;
  all.reserve(static_cast<std::size_t>(pre.d_mlp));
  for (int n = 0; n < pre.d_mlp; ++n) {
    all.push_back({layer, n, before[n], after[n], after[n] - before[n]});
  }
  std::stable_sort(all.begin(), all.end(), [](const NeuronDelta& a, const NeuronDelta& b) {
    return std::abs(a.delta) > std::abs(b.delta);
  });
  all.resize(std::min(all.size(), static_cast<std::size_t>(top_n)));
  return all;
}

LayerVector layer_mean(const HeadMatrix& m) {
  LayerVector v;
  v.metric = "layer_" + m.metric;
  v.values = m.values.rowwise().mean();
  return v;
}

std::vector<LabeledLayerVector> layer_kl_compare(const std::vector<TracePair>& pairs,
                                                 KlDirection direction) {
  std::vector<LabeledLayerVector> out;
  for (const auto& pair : pairs) {
    if (pair.pre == nullptr || pair.post == nullptr) {
      throw ContractError("layer_kl_compare: null trace set in pair '" + pair.label + "'");
    }
    if (!out.empty()) pairs.front().pre->check_comparable(*pair.pre);
    out.push_back({pair.label, layer_mean(attention_kl(*pair.pre, *pair.post, direction))});
  }
  return out;
}

Pca3 pca3_project(const Eigen::MatrixXd& latents, int iterations) {
  const Eigen::Index n = latents.rows();
  const Eigen::Index d = latents.cols();
  if (n < 4) throw DegenerateInputError("pca3 needs at least 4 points, got " + std::to_string(n));
  if (d < 3) throw DegenerateInputError("pca3 needs at least 3 dimensions");
  if (iterations < 1) throw ConfigError("pca3 iterations must be >= 1");
  Pca3 out;
  out.mean = latents.colwise().mean();
  const Eigen::MatrixXd centered = latents.rowwise() - out.mean;
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  const double total = cov.trace();
  if (!(total > 1e-300)) throw DegenerateInputError("pca3: data has zero variance");

  out.components = Eigen::MatrixXd::Zero(3, d);
  for (int c = 0; c < 3; ++c) {
    auto orthogonalize = [&](Eigen::VectorXd& v) {
      for (int j = 0; j < c; ++j) {
        v -= v.dot(out.components.row(j).transpose()) * out.components.row(j).transpose();
      }
    };
    // Start from the column of largest remaining variance.
    Eigen::Index start = 0;
    cov.diagonal().maxCoeff(&start);
    Eigen::VectorXd v = cov.col(start);
    orthogonalize(v);
    if (v.norm() < 1e-12 * total) {
      // No variance left: any direction orthogonal to the previous ones.
      for (Eigen::Index k = 0; k < d && v.norm() < 0.5; ++k) {
        v = Eigen::VectorXd::Unit(d, k);
        orthogonalize(v);
      }
    }
    v.normalize();
    for (int it = 0; it < iterations; ++it) {
      Eigen::VectorXd next = cov * v;
      orthogonalize(next);
      const double norm = next.norm();
      if (norm < 1e-12 * total) break;
      next /= norm;
      const double change = (next - v).norm();
      v = next;
      if (change < 1e-13) break;
    }
    Eigen::Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    if (v[big] < 0) v = -v;
    const double lambda = std::max(0.0, v.dot(cov * v));
    out.components.row(c) = v.transpose();
    out.explained[c] = lambda;
    cov -= lambda * v * v.transpose();
  }
  for (int c = 1; c < 3; ++c) out.explained[c] = std::min(out.explained[c], out.explained[c - 1]);
  out.coords = centered * out.components.transpose();
  return out;
}

DiffReport compute_diff_report(const TraceSet& pre, const TraceSet& post,
                               const DiffOptions& options) {
  pre.check_comparable(post);
  DiffReport r;
  r.kl = attention_kl(pre, post, options.direction);
  r.entropy_pre = attention_entropy(pre);
  r.entropy_post = attention_entropy(post);
  const EntropyDiff ed = entropy_diff(r.entropy_pre, r.entropy_post);
  r.entropy_diff = ed.diff;
  r.fraction_decreased_entropy = ed.fraction_negative;
  r.actmag_pre = activation_magnitude(pre, options.source);
  r.actmag_post = activation_magnitude(post, options.source);
  r.layer_kl.push_back({pre.model_tag + "_vs_" + post.model_tag, layer_mean(r.kl)});
  for (int l = 0; l < pre.n_layers; ++l) {
    r.neuron_deltas.push_back(neuron_deltas(pre, post, l, options.top_n));
  }
  r.metadata = {
      {"fingerprint", hex64(pre.fingerprint)},
      {"pre_model", pre.model_tag},
      {"post_model", post.model_tag},
      {"activation_source", activation_source_name(options.source)},
      {"kl_direction", options.direction == KlDirection::kPreToPost ? "pre||post" : "post||pre"},
      {"examples", pre.traces.size()},
      {"n_layers", pre.n_layers},
      {"n_heads", pre.n_heads},
      {"d_mlp", pre.d_mlp},
      {"top_n", options.top_n},
      {"fraction_decreased_entropy", r.fraction_decreased_entropy},
  };
  return r;
}

namespace {

const std::vector<std::string> kHeadFiles = {"kl.csv", "entropy_pre.csv", "entropy_post.csv",
                                             "entropy_diff.csv"};

std::string neuron_file(int layer) { return "neurons_layer" + std::to_string(layer) + ".csv"; }

void write_heads(const HeadMatrix& m, const std::filesystem::path& path) {
  CsvTable t;
  for (Eigen::Index h = 0; h < m.values.cols(); ++h) t.header.push_back("head_" + std::to_string(h));
  for (Eigen::Index l = 0; l < m.values.rows(); ++l) {
    auto& row = t.rows.emplace_back();
    for (Eigen::Index h = 0; h < m.values.cols(); ++h) row.push_back(format_real(m.values(l, h)));
  }
  write_csv(t, path);
}

HeadMatrix read_heads(const std::filesystem::path& path, std::string metric) {
  HeadMatrix m;
  m.metric = std::move(metric);
  m.values = table_matrix(read_csv(path));
  return m;
}

}  // namespace

std::vector<std::string> report_files(int n_layers) {
  std::vector<std::string> files = kHeadFiles;
  files.insert(files.end(), {"actmag.csv", "layer_kl.csv", "meta.json"});
  for (int l = 0; l < n_layers; ++l) files.push_back(neuron_file(l));
  return files;
}

void save_report(const DiffReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_heads(report.kl, dir / "kl.csv");
  write_heads(report.entropy_pre, dir / "entropy_pre.csv");
  write_heads(report.entropy_post, dir / "entropy_post.csv");
  write_heads(report.entropy_diff, dir / "entropy_diff.csv");

  const Eigen::VectorXd pct = percent_change(report.actmag_pre, report.actmag_post);
  CsvTable act{{"layer", "pre", "post", "pct_change"}, {}};
  for (int l = 0; l < report.n_layers(); ++l) {
    act.rows.push_back({std::to_string(l), format_real(report.actmag_pre.values[l]),
                        format_real(report.actmag_post.values[l]), format_real(pct[l])});
  }
  write_csv(act, dir / "actmag.csv");

  CsvTable lk{{"layer"}, {}};
  for (const auto& v : report.layer_kl) lk.header.push_back(v.label);
  for (int l = 0; l < report.n_layers(); ++l) {
    auto& row = lk.rows.emplace_back(std::vector<std::string>{std::to_string(l)});
    for (const auto& v : report.layer_kl) row.push_back(format_real(v.values.values[l]));
  }
  write_csv(lk, dir / "layer_kl.csv");

  for (int l = 0; l < static_cast<int>(report.neuron_deltas.size()); ++l) {
    CsvTable nt{{"rank", "neuron", "before", "after", "delta"}, {}};
    int rank = 1;
    for (const auto& n : report.neuron_deltas[static_cast<std::size_t>(l)]) {
      nt.rows.push_back({std::to_string(rank++), std::to_string(n.neuron), format_real(n.before),
                         format_real(n.after), format_real(n.delta)});
    }
    write_csv(nt, dir / neuron_file(l));
  }

  std::ofstream meta(dir / "meta.json");
  meta << report.metadata.dump(2) << '\n';
}

DiffReport load_report(const std::filesystem::path& dir) {
  int n_layers = -1;
  nlohmann::json meta;
  if (std::ifstream in(dir / "meta.json"); in) {
    try {
      in >> meta;
      n_layers = meta.at("n_layers").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ReportError("meta.json in " + dir.string() + " is malformed: " + e.what());
    }
  }
  std::vector<std::string> missing;
  if (n_layers < 0) {
    missing = report_files(0);
    missing.push_back("neurons_layer<k>.csv");
  } else {
    for (const auto& f : report_files(n_layers)) {
      if (!std::filesystem::exists(dir / f)) missing.push_back(f);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& f : missing) list += (list.empty() ? "" : ", ") + f;
    throw ReportError("report directory " + dir.string() + " is missing: " + list);
  }

  DiffReport r;
  r.metadata = meta;
  r.kl = read_heads(dir / "kl.csv", "attention_kl");
  r.entropy_pre = read_heads(dir / "entropy_pre.csv", "attention_entropy");
  r.entropy_post = read_heads(dir / "entropy_post.csv", "attention_entropy");
  r.entropy_diff = read_heads(dir / "entropy_diff.csv", "entropy_diff");
  if (r.kl.values.rows() != n_layers) {
    throw ReportError("kl.csv has " + std::to_string(r.kl.values.rows()) +
                      " rows but meta.json declares " + std::to_string(n_layers) + " layers");
  }
  r.fraction_decreased_entropy = meta.value("fraction_decreased_entropy", 0.0);

  const Eigen::MatrixXd act = table_matrix(read_csv(dir / "actmag.csv"), 1);
  r.actmag_pre = {"actmag", act.col(0)};
  r.actmag_post = {"actmag", act.col(1)};

  const CsvTable lk = read_csv(dir / "layer_kl.csv");
  const Eigen::MatrixXd lkm = table_matrix(lk, 1);
  for (Eigen::Index c = 0; c < lkm.cols(); ++c) {
    r.layer_kl.push_back({lk.header[static_cast<std::size_t>(c + 1)], {"layer_attention_kl", lkm.col(c)}});
  }

  for (int l = 0; l < n_layers; ++l) {
    const Eigen::MatrixXd nt = table_matrix(read_csv(dir / neuron_file(l)));
    auto& list = r.neuron_deltas.emplace_back();
    for (Eigen::Index i = 0; i < nt.rows(); ++i) {
      list.push_back({l, static_cast<int>(nt(i, 1)), nt(i, 2), nt(i, 3), nt(i, 4)});
    }
  }
  return r;
}

}  // namespace circuit_lab
