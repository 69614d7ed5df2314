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

#include "circuit_lab/rouge.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include "circuit_lab/csv.hpp"
#include "circuit_lab/error.hpp"
#include "circuit_lab/parallel.hpp"

namespace circuit_lab {

namespace {

RougeScore make_score(double overlap, double cand_total, double ref_total) {
  RougeScore s;
  s.precision = cand_total > 0 ? overlap / cand_total : 0.0;
  s.recall = ref_total > 0 ? overlap / ref_total : 0.0;
  s.f1 = overlap > 0 ? 2.0 * overlap / (cand_total + ref_total) : 0.0;
  return s;
}

std::map<std::vector<std::string>, int> ngram_counts(std::span<const std::string> tokens, int n) {
  std::map<std::vector<std::string>, int> counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return counts;
}

template <typename Scalar>
SummaryGenerator make_generator(const GptModel<Scalar>& model, const Tokenizer& tokenizer,
                                int max_len, int summary_budget,
                                std::shared_ptr<const ProjectionHook<Scalar>> hook) {
  return [&model, &tokenizer, max_len, summary_budget, hook](const Example& ex) {
    const EncodedExample enc = encode_example(tokenizer, ex, max_len, summary_budget);
    const auto out =
        generate_greedy(model, enc.prompt(), summary_budget + 1, kEosToken, hook.get());
    return tokenizer.decode(out);
  };
}

}  // namespace

std::vector<std::string> rouge_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) && c < 128) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   int n) {
  if (n < 1) throw ConfigError("rouge n must be >= 1");
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  double overlap = 0.0, cand_total = 0.0, ref_total = 0.0;
  for (const auto& [gram, c] : cand) {
    cand_total += c;
    if (auto it = ref.find(gram); it != ref.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [gram, c] : ref) ref_total += c;
  return make_score(overlap, cand_total, ref_total);
}

RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  return make_score(static_cast<double>(lcs_length<std::string>(candidate, reference)),
                    static_cast<double>(candidate.size()), static_cast<double>(reference.size()));
}

RougeSet score_summary(std::string_view candidate, std::string_view reference) {
  const auto c = rouge_tokenize(candidate);
  const auto r = rouge_tokenize(reference);
  return {rouge_n(c, r, 1), rouge_n(c, r, 2), rouge_l(c, r)};
}

ScoreTable evaluate_models(const std::vector<LabeledGenerator>& generators, const Corpus& test,
                           std::ostream* warnings) {
  if (test.empty()) throw DegenerateInputError("evaluation corpus is empty");
  ScoreTable table;
  table.examples = test.size();
  for (const auto& g : generators) {
    std::vector<RougeSet> scores(test.size());
    std::vector<std::string> errors(test.size());
    parallel_for(test.size(), [&](unsigned, std::size_t i) {
      try {
        scores[i] = score_summary(g.generate(test[i]), test[i].summary);
      } catch (const std::exception& e) {
        scores[i] = {};
        errors[i] = e.what();
      }
    });
    EvalRow row;
    row.label = g.label;
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (!errors[i].empty()) {
        ++row.failures;
        if (warnings) {
          *warnings << "warning: " << g.label << " failed on example '" << test[i].id
                    << "': " << errors[i] << " (scored as zero)\n";
        }
      }
      for (auto [dst, src] : {std::pair{&row.mean.r1, &scores[i].r1},
                              std::pair{&row.mean.r2, &scores[i].r2},
                              std::pair{&row.mean.rl, &scores[i].rl}}) {
        dst->precision += src->precision;
        dst->recall += src->recall;
        dst->f1 += src->f1;
      }
    }
    const double n = static_cast<double>(test.size());
    for (RougeScore* s : {&row.mean.r1, &row.mean.r2, &row.mean.rl}) {
      s->precision /= n;
      s->recall /= n;
      s->f1 /= n;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

template <typename Scalar>
SummaryGenerator greedy_generator(const GptModel<Scalar>& model, const Tokenizer& tokenizer,
                                  int max_len, int summary_budget) {
  return make_generator<Scalar>(model, tokenizer, max_len, summary_budget, nullptr);
}

template <typename Scalar>
SummaryGenerator greedy_generator(const AdaptedModel<Scalar>& model, const Tokenizer& tokenizer,
                                  int max_len, int summary_budget) {
  return make_generator<Scalar>(model.base, tokenizer, max_len, summary_budget,
                                std::make_shared<const ProjectionHook<Scalar>>(model.hook()));
}

template SummaryGenerator greedy_generator(const GptModel<float>&, const Tokenizer&, int, int);
template SummaryGenerator greedy_generator(const GptModel<double>&, const Tokenizer&, int, int);
template SummaryGenerator greedy_generator(const AdaptedModel<float>&, const Tokenizer&, int, int);
template SummaryGenerator greedy_generator(const AdaptedModel<double>&, const Tokenizer&, int,
                                           int);

void write_score_csv(const ScoreTable& table, const std::filesystem::path& path) {
  CsvTable t{{"model", "rouge1", "rouge2", "rougeL", "rouge1_p", "rouge1_r", "rouge2_p",
              "rouge2_r", "rougeL_p", "rougeL_r", "failures", "examples"},
             {}};
  for (const auto& r : table.rows) {
    const auto& m = r.mean;
    t.rows.push_back({r.label, format_real(m.r1.f1), format_real(m.r2.f1), format_real(m.rl.f1),
                      format_real(m.r1.precision), format_real(m.r1.recall),
                      format_real(m.r2.precision), format_real(m.r2.recall),
                      format_real(m.rl.precision), format_real(m.rl.recall),
                      std::to_string(r.failures), std::to_string(table.examples)});
  }
  write_csv(t, path);
}

ScoreTable read_score_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() != 12 || t.header[0] != "model") {
    throw ParseError(1, path.filename().string() + ": unexpected header");
  }
  const Eigen::MatrixXd m = table_matrix(t, 1);
  ScoreTable table;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    EvalRow r;
    r.label = t.rows[static_cast<std::size_t>(i)][0];
    r.mean.r1 = {m(i, 3), m(i, 4), m(i, 0)};
    r.mean.r2 = {m(i, 5), m(i, 6), m(i, 1)};
    r.mean.rl = {m(i, 7), m(i, 8), m(i, 2)};
    r.failures = static_cast<std::size_t>(m(i, 9));
    table.examples = static_cast<std::size_t>(m(i, 10));
    table.rows.push_back(r);
  }
  return table;
}

std::string format_score_table(const ScoreTable& table) {
  std::size_t width = 5;
  for (const auto& r : table.rows) width = std::max(width, r.label.size());
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %8s\n", static_cast<int>(width), "Model",
                "ROUGE-1", "ROUGE-2", "ROUGE-L");
  out << buf;
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %8.4f  %8.4f\n", static_cast<int>(width),
                  r.label.c_str(), r.mean.r1.f1, r.mean.r2.f1, r.mean.rl.f1);
    out << buf;
  }
  return out.str();
}

}  // namespace circuit_lab
