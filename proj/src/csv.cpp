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

#include "circuit_lab/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "circuit_lab/error.hpp"

namespace circuit_lab {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ReportError("cannot open " + path.string());
  CsvTable table;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw ParseError(row, path.filename().string() + ": expected " +
                                std::to_string(table.header.size()) + " fields, found " +
                                std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw ParseError(1, path.filename().string() + ": empty file");
  return table;
}

void write_csv(const CsvTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ReportError("cannot write " + path.string());
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out << ',';
      out << fields[i];
    }
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_real(const std::string& field, std::size_t row) {
  double v = 0.0;
  const char* end = field.data() + field.size();
  const auto res = std::from_chars(field.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ParseError(row, "not a number: '" + field + "'");
  }
  return v;
}

Eigen::MatrixXd table_matrix(const CsvTable& table, int skip_cols) {
  const auto cols = static_cast<Eigen::Index>(table.header.size()) - skip_cols;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(table.rows.size()), std::max<Eigen::Index>(cols, 0));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      // Row numbers count the header line.
      m(static_cast<Eigen::Index>(r), c) =
          parse_real(table.rows[r][static_cast<std::size_t>(c + skip_cols)], r + 2);
    }
  }
  return m;
}

}  // namespace circuit_lab
