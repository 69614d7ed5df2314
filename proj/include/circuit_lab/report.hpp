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

// File renderings of analysis results: grayscale heatmaps, a markdown
// summary, and the manifest written next to every run's artifacts.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "circuit_lab/circuit.hpp"
#include "circuit_lab/metrics.hpp"
#include "circuit_lab/rouge.hpp"

namespace circuit_lab {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kHeatmapScale = 32;

enum class HeatmapFormat { kPgm, kCsv };

HeatmapFormat parse_heatmap_format(std::string_view name);

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }
};

// Min-max normalized to 0..255, each cell a scale x scale block. A constant
// matrix renders as 128.
GrayImage heatmap_image(const Eigen::MatrixXd& values, int scale = kHeatmapScale);

void write_pgm(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

// Reads a head-matrix CSV (one header line, numeric cells) and writes either a
// PGM or a validated copy of the CSV.
void render_heatmap(const std::filesystem::path& csv, const std::filesystem::path& out,
                    HeatmapFormat format = HeatmapFormat::kPgm, int scale = kHeatmapScale);

// Layer indices are printed as index + index_base.
std::string render_markdown(const DiffReport& report, const CircuitSpec* circuit,
                            const ScoreTable* rouge, int index_base = 0);

// Loads the report directory (and the optional circuit and score table) and
// writes the markdown summary to `out`.
void write_report(const std::filesystem::path& report_dir, const std::filesystem::path& out,
                  const std::optional<std::filesystem::path>& circuit,
                  const std::optional<std::filesystem::path>& rouge, int index_base = 0);

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  nlohmann::json inputs = nlohmann::json::object();
  nlohmann::json outputs = nlohmann::json::object();
  std::string tool_version = kToolVersion;
  double wall_seconds = 0.0;
  std::string status = "ok";
  std::string failed_stage;
  std::string error;

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;
};

}  // namespace circuit_lab
