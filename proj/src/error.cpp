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

#include "circuit_lab/error.hpp"

namespace circuit_lab {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kDegenerateInput:
    case ErrorKind::kLength:
    case ErrorKind::kEncoding:
    case ErrorKind::kParse:
    case ErrorKind::kFormat:
    case ErrorKind::kReport:
      return 3;
    case ErrorKind::kNumeric:
    case ErrorKind::kTraining:
      return 4;
    case ErrorKind::kComparison:
      return 5;
    case ErrorKind::kShape:
    case ErrorKind::kContract:
      return 1;
  }
  return 1;
}

const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kDegenerateInput: return "degenerate input";
    case ErrorKind::kContract: return "contract violation";
    case ErrorKind::kLength: return "length error";
    case ErrorKind::kEncoding: return "encoding error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kTraining: return "training error";
    case ErrorKind::kComparison: return "comparison error";
    case ErrorKind::kReport: return "report error";
  }
  return "error";
}

}  // namespace circuit_lab
