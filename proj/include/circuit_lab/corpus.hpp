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

// Summarization corpora: synthetic generation with planted salient facts,
// word-level tokenization, "[article] TL;DR: [summary]" encoding, JSONL I/O
// and seeded splits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "circuit_lab/rng.hpp"
#include "circuit_lab/tensor.hpp"

namespace circuit_lab {

struct Example {
  std::string id;
  std::string article;
  std::string summary;
  // One flag per article sentence; empty for corpora without ground truth.
  std::vector<bool> salient_mask;

  bool operator==(const Example&) const = default;
};

using Corpus = std::vector<Example>;

struct SyntheticSpec {
  std::size_t n_examples = 2000;
  int sentences_per_article = 8;
  int salient_per_article = 2;
  int vocab_word_count = 400;
  int template_family = 0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

// Articles mix filler sentences with salient "subject attribute value"
// statements introduced by a fixed cue phrase; the summary restates the
// salient facts in article order.
Corpus generate_synthetic(const SyntheticSpec& spec, Rng& rng);

// Words that carry no content in the synthetic grammar (cue phrases,
// articles, copulas, punctuation).
bool is_function_word(std::string_view word);

std::vector<std::string> split_words(std::string_view text);
std::string normalize_whitespace(std::string_view text);
// Sentences are delimited by a standalone "." token, which stays attached.
std::vector<std::string> split_sentences(std::string_view article);

class Tokenizer {
 public:
  static constexpr std::array<std::string_view, 4> kSpecials = {
      "<pad>", "<bos>", "<eos>", "TL;DR:"};

  // Specials take ids 0-3; corpus words follow by descending frequency, then
  // lexicographically. Throws ConfigError when the result exceeds max_vocab.
  static Tokenizer build(const Corpus& corpus,
                         std::optional<int> max_vocab = std::nullopt);
  // `words` must start with the four specials.
  static Tokenizer from_vocab(std::vector<std::string> words);

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;
  std::optional<TokenId> find(std::string_view word) const;

  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& vocab() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
};

// [BOS, article..., SEP, summary..., EOS]. loss_mask[i] marks tokens[i] as a
// prediction target; it is true exactly on the summary tokens and EOS.
struct EncodedExample {
  std::string id;
  std::vector<TokenId> tokens;
  std::vector<bool> loss_mask;
  int sep_position = 0;

  std::span<const TokenId> article() const {
    return std::span<const TokenId>(tokens).subspan(1, sep_position - 1);
  }
  std::span<const TokenId> summary() const {
    return std::span<const TokenId>(tokens).subspan(
        sep_position + 1, tokens.size() - sep_position - 2);
  }
  std::span<const TokenId> prompt() const {
    return std::span<const TokenId>(tokens).first(sep_position + 1);
  }
  std::size_t target_count() const;
};

inline constexpr int kDefaultSummaryBudget = 24;

// Article budget is max_len - summary_budget - 3; articles keep their head.
EncodedExample encode_example(const Tokenizer& tokenizer, const Example& example,
                              int max_len,
                              int summary_budget = kDefaultSummaryBudget);

std::vector<EncodedExample> encode_corpus(const Tokenizer& tokenizer,
                                          const Corpus& corpus, int max_len,
                                          int summary_budget = kDefaultSummaryBudget);

// Article-only language-modeling sequence [BOS, article..., EOS] with every
// position after BOS as a target.
EncodedExample encode_article(const Tokenizer& tokenizer, const Example& example,
                              int max_len);

// One JSON object per line with "article" and "summary" (plus optional "id"
// and "salient_mask"). Whitespace inside texts is normalized.
Corpus load_jsonl(const std::filesystem::path& path);
void save_jsonl(const Corpus& corpus, const std::filesystem::path& path);

struct CorpusSplits {
  Corpus train;
  Corpus val;
  Corpus test;
};

// Seeded shuffle, then train/val sizes rounded from the fractions and the
// rest to test.
CorpusSplits split(const Corpus& corpus, std::array<double, 3> fractions, Rng& rng);

}  // namespace circuit_lab
