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

// Minimal CSV reading and writing for the numeric tables the analysis emits.
// Fields never contain commas or quotes, so no quoting rules are needed.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace circuit_lab {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Throws ParseError naming the 1-based file row of the first ragged row.
CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const CsvTable& table, const std::filesystem::path& path);

// Shortest text that parses back to the same double.
std::string format_real(double v);
double parse_real(const std::string& field, std::size_t row);

// Every column except the first `skip_cols` must be numeric.
Eigen::MatrixXd table_matrix(const CsvTable& table, int skip_cols = 0);

}  // namespace circuit_lab
