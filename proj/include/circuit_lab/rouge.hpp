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

// ROUGE-1/2/L on case-folded word tokens, and corpus-level comparison of
// summary generators.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "circuit_lab/corpus.hpp"
#include "circuit_lab/lora.hpp"
#include "circuit_lab/model.hpp"

namespace circuit_lab {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Lowercases, keeps only ASCII letters and digits, and splits on everything
// else.
std::vector<std::string> rouge_tokenize(std::string_view text);

RougeScore rouge_n(std::span<const std::string> candidate,
                   std::span<const std::string> reference, int n);
RougeScore rouge_l(std::span<const std::string> candidate,
                   std::span<const std::string> reference);

// Two-row dynamic program over any equality-comparable token type.
template <typename T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct RougeSet {
  RougeScore r1, r2, rl;
};

RougeSet score_summary(std::string_view candidate, std::string_view reference);

// Produces a summary for one example; may throw.
using SummaryGenerator = std::function<std::string(const Example&)>;

struct LabeledGenerator {
  std::string label;
  SummaryGenerator generate;
};

struct EvalRow {
  std::string label;
  RougeSet mean;
  std::size_t failures = 0;
};

struct ScoreTable {
  std::vector<EvalRow> rows;
  std::size_t examples = 0;
};

// A generator that throws on an example scores zero there; a warning naming
// the example goes to `warnings`.
ScoreTable evaluate_models(const std::vector<LabeledGenerator>& generators,
                           const Corpus& test, std::ostream* warnings = nullptr);

// Greedy decoding from the [BOS article SEP] prompt. The generator keeps
// references to the model and tokenizer.
template <typename Scalar>
SummaryGenerator greedy_generator(const GptModel<Scalar>& model, const Tokenizer& tokenizer,
                                  int max_len, int summary_budget = kDefaultSummaryBudget);

template <typename Scalar>
SummaryGenerator greedy_generator(const AdaptedModel<Scalar>& model, const Tokenizer& tokenizer,
                                  int max_len, int summary_budget = kDefaultSummaryBudget);

// Columns: model, rouge1, rouge2, rougeL (F1), then precision/recall pairs.
void write_score_csv(const ScoreTable& table, const std::filesystem::path& path);
ScoreTable read_score_csv(const std::filesystem::path& path);
std::string format_score_table(const ScoreTable& table);

}  // namespace circuit_lab
