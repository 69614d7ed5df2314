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

#include "circuit_lab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "circuit_lab/csv.hpp"
#include "circuit_lab/error.hpp"

namespace circuit_lab {

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

HeatmapFormat parse_heatmap_format(std::string_view name) {
  if (name == "pgm") return HeatmapFormat::kPgm;
  if (name == "csv") return HeatmapFormat::kCsv;
  throw ConfigError("unknown heatmap format '" + std::string(name) + "' (expected pgm or csv)");
}

GrayImage heatmap_image(const Eigen::MatrixXd& values, int scale) {
  if (values.size() == 0) throw DegenerateInputError("heatmap of an empty matrix");
  if (scale < 1) throw ConfigError("heatmap scale must be >= 1");
  if (!values.allFinite()) throw NumericError("heatmap values must be finite");
  const double lo = values.minCoeff();
  const double hi = values.maxCoeff();
  GrayImage img;
  img.width = static_cast<int>(values.cols()) * scale;
  img.height = static_cast<int>(values.rows()) * scale;
  img.pixels.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double v = values(y / scale, x / scale);
      const double level = hi > lo ? std::round(255.0 * (v - lo) / (hi - lo)) : 128.0;
      img.pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(img.width) +
                 static_cast<std::size_t>(x)] = static_cast<std::uint8_t>(level);
    }
  }
  return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ReportError("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReportError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  GrayImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || img.width < 1 || img.height < 1) {
    throw FormatError(0, path.string() + " is not an 8-bit binary PGM");
  }
  in.get();
  img.pixels.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw FormatError(static_cast<std::uint64_t>(in.gcount()), path.string() + " is truncated");
  }
  return img;
}

void render_heatmap(const std::filesystem::path& csv, const std::filesystem::path& out,
                    HeatmapFormat format, int scale) {
  const CsvTable table = read_csv(csv);
  const Eigen::MatrixXd m = table_matrix(table);
  if (format == HeatmapFormat::kCsv) {
    write_csv(table, out);
    return;
  }
  write_pgm(heatmap_image(m, scale), out);
}

std::string render_markdown(const DiffReport& report, const CircuitSpec* circuit,
                            const ScoreTable* rouge, int index_base) {
  std::ostringstream md;
  const int L = report.n_layers();
  const int H = report.n_heads();
  md << "# Differential analysis\n\n";
  if (report.metadata.contains("pre_model")) {
    md << "Compared `" << report.metadata.value("pre_model", "") << "` against `"
       << report.metadata.value("post_model", "") << "` on "
       << report.metadata.value("examples", 0) << " examples (fingerprint "
       << report.metadata.value("fingerprint", "") << ").\n\n";
  }

  md << "## Top heads by KL divergence\n\n| rank | layer | head | KL |\n|---|---|---|---|\n";
  std::vector<int> cells(static_cast<std::size_t>(L * H));
  std::iota(cells.begin(), cells.end(), 0);
  const Eigen::MatrixXd& kl = report.kl.values;
  std::stable_sort(cells.begin(), cells.end(),
                   [&](int a, int b) { return kl(a / H, a % H) > kl(b / H, b % H); });
  for (std::size_t i = 0; i < std::min<std::size_t>(5, cells.size()); ++i) {
    const int l = cells[i] / H;
    const int h = cells[i] % H;
    md << "| " << i + 1 << " | " << l + index_base << " | " << h + index_base << " | "
       << fixed4(kl(l, h)) << " |\n";
  }

  const auto decreased = (report.entropy_diff.values.array() < 0.0).count();
  const double fraction =
      static_cast<double>(decreased) / static_cast<double>(report.entropy_diff.values.size());
  md << "\nFraction decreased entropy: " << fixed4(fraction) << " (" << decreased << " of "
     << report.entropy_diff.values.size() << " heads)\n\n";

  md << "## Per-layer metrics\n\n| layer |";
  for (const auto& v : report.layer_kl) md << " KL " << v.label << " |";
  md << " ActMag pre | ActMag post | change % |\n|---|";
  for (std::size_t i = 0; i < report.layer_kl.size(); ++i) md << "---|";
  md << "---|---|---|\n";
  const Eigen::VectorXd pct = percent_change(report.actmag_pre, report.actmag_post);
  for (int l = 0; l < L; ++l) {
    md << "| " << l + index_base << " |";
    for (const auto& v : report.layer_kl) md << ' ' << fixed4(v.values.values[l]) << " |";
    md << ' ' << fixed4(report.actmag_pre.values[l]) << " | " << fixed4(report.actmag_post.values[l])
       << " | " << fixed4(pct[l]) << " |\n";
  }

  md << "\n## Circuit layers\n\n";
  if (circuit) {
    md << "| layer | score |\n|---|---|\n";
    for (const auto& c : circuit->layers) {
      md << "| " << c.layer + index_base << " | " << fixed4(c.score) << " |\n";
    }
    md << "\nHeads at or above the KL threshold " << fixed4(circuit->head_threshold) << ":";
    for (const auto& h : circuit->heads) {
      md << " (" << h.layer + index_base << ", " << h.head + index_base << ")"
         << (h.auxiliary ? "*" : "");
    }
    md << "\n";
  } else {
    md << "No circuit spec available.\n";
  }

  md << "\n## ROUGE\n\n";
  if (rouge) {
    md << "| model | ROUGE-1 | ROUGE-2 | ROUGE-L |\n|---|---|---|---|\n";
    for (const auto& r : rouge->rows) {
      md << "| " << r.label << " | " << fixed4(r.mean.r1.f1) << " | " << fixed4(r.mean.r2.f1)
         << " | " << fixed4(r.mean.rl.f1) << " |\n";
    }
  } else {
    md << "No score table available.\n";
  }
  return md.str();
}

void write_report(const std::filesystem::path& report_dir, const std::filesystem::path& out,
                  const std::optional<std::filesystem::path>& circuit,
                  const std::optional<std::filesystem::path>& rouge, int index_base) {
  const DiffReport report = load_report(report_dir);
  std::vector<std::string> missing;
  if (circuit && !std::filesystem::exists(*circuit)) missing.push_back(circuit->string());
  if (rouge && !std::filesystem::exists(*rouge)) missing.push_back(rouge->string());
  if (!missing.empty()) {
    std::string list;
    for (const auto& f : missing) list += (list.empty() ? "" : ", ") + f;
    throw ReportError("missing report inputs: " + list);
  }
  std::optional<CircuitSpec> spec;
  if (circuit) spec = load_circuit(*circuit);
  std::optional<ScoreTable> scores;
  if (rouge) scores = read_score_csv(*rouge);
  std::ofstream f(out);
  if (!f) throw ReportError("cannot write " + out.string());
  f << render_markdown(report, spec ? &*spec : nullptr, scores ? &*scores : nullptr, index_base);
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j = {{"command", command},         {"config", config},
                      {"seeds", seeds},             {"inputs", inputs},
                      {"outputs", outputs},         {"tool_version", tool_version},
                      {"wall_seconds", wall_seconds}, {"status", status}};
  if (!failed_stage.empty()) j["failed_stage"] = failed_stage;
  if (!error.empty()) j["error"] = error;
  return j;
}

void RunManifest::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ReportError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

}  // namespace circuit_lab
