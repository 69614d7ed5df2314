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

#include <gtest/gtest.h>

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "circuit_lab/error.hpp"
#include "circuit_lab/rouge.hpp"
#include "test_support.hpp"

using namespace circuit_lab;
using circuit_lab::testing::TempDir;

namespace {

std::vector<std::string> words(const std::string& s) { return rouge_tokenize(s); }

// Longest common subsequence by trying every subsequence of `a`.
std::size_t brute_lcs(const std::string& a, const std::string& b) {
  std::size_t best = 0;
  for (unsigned mask = 0; mask < (1u << a.size()); ++mask) {
    std::string sub;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (mask & (1u << i)) sub += a[i];
    }
    std::size_t j = 0;
    for (char c : b) {
      if (j < sub.size() && sub[j] == c) ++j;
    }
    if (j == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

}  // namespace

TEST(Rouge, Tokenization) {
  EXPECT_EQ(words("Hello, World! 42x"), (std::vector<std::string>{"hello", "world", "42x"}));
  EXPECT_EQ(words(" .. "), std::vector<std::string>{});
}

TEST(Rouge, OneTokenSubstitution) {
  const auto s = score_summary("a b c d e", "a b c d f");
  EXPECT_DOUBLE_EQ(s.r1.f1, 0.8);
  EXPECT_DOUBLE_EQ(s.r2.f1, 0.75);
  EXPECT_DOUBLE_EQ(s.rl.f1, 0.8);
}

TEST(Rouge, HalfOverlap) {
  const auto s = score_summary("a b", "a c");
  EXPECT_DOUBLE_EQ(s.r1.f1, 0.5);
  EXPECT_DOUBLE_EQ(s.r2.f1, 0.0);
  EXPECT_DOUBLE_EQ(s.rl.f1, 0.5);
}

TEST(Rouge, OrderMattersOnlyForBigramsAndLcs) {
  const auto s = score_summary("a b c", "a c b");
  EXPECT_DOUBLE_EQ(s.r1.f1, 1.0);
  EXPECT_DOUBLE_EQ(s.r2.f1, 0.0);
  EXPECT_NEAR(s.rl.f1, 2.0 / 3.0, 1e-15);
}

TEST(Rouge, ClippedCountsAndAsymmetry) {
  const auto c = words("the the the cat");
  const auto r = words("the cat");
  const auto s = rouge_n(c, r, 1);
  EXPECT_DOUBLE_EQ(s.precision, 0.5);
  EXPECT_DOUBLE_EQ(s.recall, 1.0);
  EXPECT_NEAR(s.f1, 2.0 / 3.0, 1e-15);
}

TEST(Rouge, EmptyAndInvalid) {
  const auto s = score_summary("", "a b");
  EXPECT_EQ(s.r1.f1, 0.0);
  EXPECT_EQ(s.rl.f1, 0.0);
  const auto c = words("a");
  EXPECT_THROW(rouge_n(c, c, 0), ConfigError);
  EXPECT_EQ(rouge_n(c, c, 2).f1, 0.0);
}

TEST(Rouge, LcsMatchesBruteForce) {
  const std::vector<std::string> strings = {"", "a", "ab", "ba", "aab", "abab", "bbaa", "abba", "babab"};
  for (const auto& a : strings) {
    for (const auto& b : strings) {
      EXPECT_EQ(lcs_length<char>(std::span<const char>(a.data(), a.size()),
                                 std::span<const char>(b.data(), b.size())),
                brute_lcs(a, b))
          << a << " / " << b;
    }
  }
}

TEST(Evaluate, ThrowingGeneratorScoresZeroAndWarns) {
  Corpus test = {{"e0", "x", "a b c", {}}, {"e1", "y", "d e", {}}};
  std::vector<LabeledGenerator> gens = {
      {"echo", [](const Example& e) { return e.summary; }},
      {"flaky", [](const Example& e) -> std::string {
         if (e.id == "e1") throw std::runtime_error("boom");
         return e.summary;
       }}};
  std::ostringstream warn;
  const auto t = evaluate_models(gens, test, &warn);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.examples, 2u);
  EXPECT_DOUBLE_EQ(t.rows[0].mean.r1.f1, 1.0);
  EXPECT_EQ(t.rows[0].failures, 0u);
  EXPECT_DOUBLE_EQ(t.rows[1].mean.r1.f1, 0.5);
  EXPECT_EQ(t.rows[1].failures, 1u);
  EXPECT_NE(warn.str().find("e1"), std::string::npos);
  EXPECT_THROW(evaluate_models(gens, {}), DegenerateInputError);
}

TEST(Evaluate, ScoreCsvRoundTrip) {
  Corpus test = {{"e0", "x", "a b c", {}}, {"e1", "y", "d e f g", {}}};
  std::vector<LabeledGenerator> gens = {{"half", [](const Example& e) {
    return e.summary.substr(0, e.summary.size() / 2);
  }}};
  const auto t = evaluate_models(gens, test);
  TempDir dir("rouge_csv");
  write_score_csv(t, dir / "r.csv");
  const auto back = read_score_csv(dir / "r.csv");
  ASSERT_EQ(back.rows.size(), 1u);
  EXPECT_EQ(back.rows[0].label, "half");
  EXPECT_EQ(back.rows[0].mean.r1.f1, t.rows[0].mean.r1.f1);
  EXPECT_EQ(back.rows[0].mean.rl.recall, t.rows[0].mean.rl.recall);
  EXPECT_EQ(back.examples, 2u);
  const auto text = format_score_table(t);
  EXPECT_NE(text.find("half"), std::string::npos);
}

TEST(Evaluate, GreedyGeneratorProducesText) {
  const auto d = circuit_lab::testing::tiny_data(3);
  Rng rng(2);
  const auto model =
      GptModel<float>::init(circuit_lab::testing::tiny_config(d.tokenizer.size()), rng);
  const auto gen = greedy_generator(model, d.tokenizer, 24, 8);
  const auto a = gen(d.corpus[0]);
  EXPECT_EQ(a, gen(d.corpus[0]));
  EXPECT_LE(split_words(a).size(), 9u);
}
