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

#include <cstdint>
#include <stdexcept>
#include <string>

namespace circuit_lab {

enum class ErrorKind {
  kConfig,
  kShape,
  kNumeric,
  kDegenerateInput,
  kContract,
  kLength,
  kEncoding,
  kParse,
  kFormat,
  kTraining,
  kComparison,
  kReport,
};

// Process exit code for a failure of the given kind:
// 2 config, 3 data, 4 training divergence, 5 comparison, 1 anything else.
int exit_code(ErrorKind kind);

const char* kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

#define CIRCUIT_LAB_ERROR(Name, Kind)                              \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(Kind, what) {}  \
  };

CIRCUIT_LAB_ERROR(ConfigError, ErrorKind::kConfig)
CIRCUIT_LAB_ERROR(ShapeError, ErrorKind::kShape)
CIRCUIT_LAB_ERROR(NumericError, ErrorKind::kNumeric)
CIRCUIT_LAB_ERROR(DegenerateInputError, ErrorKind::kDegenerateInput)
CIRCUIT_LAB_ERROR(ContractError, ErrorKind::kContract)
CIRCUIT_LAB_ERROR(LengthError, ErrorKind::kLength)
CIRCUIT_LAB_ERROR(EncodingError, ErrorKind::kEncoding)
CIRCUIT_LAB_ERROR(TrainingError, ErrorKind::kTraining)
CIRCUIT_LAB_ERROR(ComparisonError, ErrorKind::kComparison)
CIRCUIT_LAB_ERROR(ReportError, ErrorKind::kReport)

#undef CIRCUIT_LAB_ERROR

// Malformed text input; carries the 1-based line (or CSV row) number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::kParse, "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Malformed binary file; carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(std::uint64_t offset, const std::string& what)
      : Error(ErrorKind::kFormat,
              "offset " + std::to_string(offset) + ": " + what),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace circuit_lab
