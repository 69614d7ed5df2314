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

#include "circuit_lab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <utility>

#include "circuit_lab/error.hpp"
#include "circuit_lab/model.hpp"

namespace circuit_lab {

namespace {

constexpr std::array<std::string_view, 13> kFunctionWords = {
    "the", "a",  "was", "is",       "near", "with", "officials",
    "said", "it", "reported", "that", "by",   "."};

struct Lexicon {
  std::vector<std::string> names, attributes, values, nouns, verbs, adjectives;
};

Lexicon make_lexicon(int word_count, Rng& rng) {
  static constexpr std::string_view kConsonants = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (static_cast<int>(words.size()) < word_count) {
    const int syllables = 2 + static_cast<int>(rng.below(2));
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      w += kConsonants[rng.below(kConsonants.size())];
      w += kVowels[rng.below(kVowels.size())];
    }
    if (is_function_word(w) || !seen.insert(w).second) continue;
    words.push_back(std::move(w));
  }
  // Category shares: names 20%, attributes 10%, values 20%, nouns 25%,
  // verbs 15%, adjectives the rest.
  Lexicon lex;
  const auto take = [&](std::vector<std::string>& dst, double share,
                        std::size_t& cursor) {
    const auto n = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(share * word_count)));
    for (std::size_t i = 0; i < n && cursor < words.size(); ++i) {
      dst.push_back(words[cursor++]);
    }
  };
  std::size_t cursor = 0;
  take(lex.names, 0.20, cursor);
  take(lex.attributes, 0.10, cursor);
  take(lex.values, 0.20, cursor);
  take(lex.nouns, 0.25, cursor);
  take(lex.verbs, 0.15, cursor);
  while (cursor < words.size()) lex.adjectives.push_back(words[cursor++]);
  if (lex.adjectives.empty()) lex.adjectives.push_back(lex.nouns.front());
  return lex;
}

const std::string& pick(const std::vector<std::string>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

std::string filler_sentence(const Lexicon& lex, Rng& rng) {
  switch (rng.below(3)) {
    case 0:
      return "the " + pick(lex.adjectives, rng) + " " + pick(lex.nouns, rng) +
             " " + pick(lex.verbs, rng) + " the " + pick(lex.nouns, rng) + " .";
    case 1:
      return "a " + pick(lex.nouns, rng) + " " + pick(lex.verbs, rng) +
             " near the " + pick(lex.adjectives, rng) + " " +
             pick(lex.nouns, rng) + " .";
    default:
      return "the " + pick(lex.nouns, rng) + " was " + pick(lex.adjectives, rng) +
             " with a " + pick(lex.nouns, rng) + " .";
  }
}

std::string_view cue_phrase(int family) {
  switch (family % 3) {
    case 0: return "officials said";
    case 1: return "it was reported that";
    default: return "reported by officials";
  }
}

}  // namespace

bool is_function_word(std::string_view word) {
  return std::find(kFunctionWords.begin(), kFunctionWords.end(), word) !=
         kFunctionWords.end();
}

void SyntheticSpec::validate() const {
  if (n_examples == 0) throw ConfigError("synthetic spec: n_examples must be > 0");
  if (sentences_per_article < 1) {
    throw ConfigError("synthetic spec: sentences_per_article must be >= 1");
  }
  if (salient_per_article < 1 || salient_per_article >= sentences_per_article) {
    throw ConfigError(
        "synthetic spec: need 1 <= salient_per_article < sentences_per_article");
  }
  if (vocab_word_count < 12) {
    throw ConfigError("synthetic spec: vocab_word_count must be >= 12");
  }
  if (template_family < 0) throw ConfigError("synthetic spec: bad template family");
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"n_examples", n_examples},
          {"sentences_per_article", sentences_per_article},
          {"salient_per_article", salient_per_article},
          {"vocab_word_count", vocab_word_count},
          {"template_family", template_family},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.n_examples = j.value("n_examples", s.n_examples);
    s.sentences_per_article = j.value("sentences_per_article", s.sentences_per_article);
    s.salient_per_article = j.value("salient_per_article", s.salient_per_article);
    s.vocab_word_count = j.value("vocab_word_count", s.vocab_word_count);
    s.template_family = j.value("template_family", s.template_family);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

Corpus generate_synthetic(const SyntheticSpec& spec, Rng& rng) {
  spec.validate();
  Rng lexicon_rng = rng.fork(1);
  const Lexicon lex = make_lexicon(spec.vocab_word_count, lexicon_rng);
  const std::string cue(cue_phrase(spec.template_family));

  Corpus corpus;
  corpus.reserve(spec.n_examples);
  std::vector<int> order(static_cast<std::size_t>(spec.sentences_per_article));
  for (std::size_t e = 0; e < spec.n_examples; ++e) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    std::vector<bool> salient(order.size(), false);
    for (int i = 0; i < spec.salient_per_article; ++i) {
      salient[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
    }

    Example ex;
    ex.id = "ex" + std::to_string(e);
    ex.salient_mask = salient;
    std::vector<std::string> facts;
    std::set<std::string> used_names;
    for (std::size_t s = 0; s < salient.size(); ++s) {
      std::string sentence;
      if (salient[s]) {
        std::string name;
        do {
          name = pick(lex.names, rng);
        } while (!used_names.insert(name).second &&
                 used_names.size() < lex.names.size());
        const std::string fact = name + " " + pick(lex.attributes, rng) +
                                 " is " + pick(lex.values, rng) + " .";
        sentence = cue + " " + fact;
        facts.push_back(fact);
      } else {
        sentence = filler_sentence(lex, rng);
      }
      if (!ex.article.empty()) ex.article += ' ';
      ex.article += sentence;
    }
    for (const auto& f : facts) {
      if (!ex.summary.empty()) ex.summary += ' ';
      ex.summary += f;
    }
    corpus.push_back(std::move(ex));
  }
  return corpus;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view article) {
  std::vector<std::string> out;
  std::string current;
  for (const auto& w : split_words(article)) {
    if (!current.empty()) current += ' ';
    current += w;
    if (w == ".") out.push_back(std::exchange(current, {}));
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

Tokenizer Tokenizer::build(const Corpus& corpus, std::optional<int> max_vocab) {
  if (corpus.empty()) throw DegenerateInputError("cannot build tokenizer from empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& ex : corpus) {
    for (const auto* text : {&ex.article, &ex.summary}) {
      for (auto& w : split_words(*text)) ++freq[w];
    }
  }
  for (auto s : kSpecials) freq.erase(std::string(s));
  std::vector<std::pair<std::string, std::size_t>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words(kSpecials.begin(), kSpecials.end());
  for (auto& [w, n] : entries) words.push_back(w);
  if (max_vocab && static_cast<int>(words.size()) > *max_vocab) {
    throw ConfigError("vocabulary of " + std::to_string(words.size()) +
                      " words exceeds model vocab_size " +
                      std::to_string(*max_vocab));
  }
  return from_vocab(std::move(words));
}

Tokenizer Tokenizer::from_vocab(std::vector<std::string> words) {
  if (words.size() < kSpecials.size() ||
      !std::equal(kSpecials.begin(), kSpecials.end(), words.begin())) {
    throw ConfigError("vocabulary must start with the special tokens");
  }
  Tokenizer t;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!t.ids_.emplace(words[i], static_cast<TokenId>(i)).second) {
      throw ConfigError("duplicate vocabulary entry '" + words[i] + "'");
    }
  }
  t.words_ = std::move(words);
  return t;
}

std::optional<TokenId> Tokenizer::find(std::string_view word) const {
  const auto it = ids_.find(std::string(word));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  std::vector<std::string> missing;
  for (const auto& w : split_words(text)) {
    if (auto id = find(w)) {
      ids.push_back(*id);
    } else if (std::find(missing.begin(), missing.end(), w) == missing.end()) {
      missing.push_back(w);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw EncodingError("out-of-vocabulary tokens: " + list);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || id >= size()) {
      throw EncodingError("token id " + std::to_string(id) + " outside vocabulary");
    }
    if (!out.empty()) out += ' ';
    out += words_[static_cast<std::size_t>(id)];
  }
  return out;
}

std::size_t EncodedExample::target_count() const {
  return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), true));
}

EncodedExample encode_example(const Tokenizer& tokenizer, const Example& example,
                              int max_len, int summary_budget) {
  const int article_budget = max_len - summary_budget - 3;
  if (summary_budget < 1 || article_budget < 1) {
    throw ConfigError("max_len " + std::to_string(max_len) +
                      " leaves no room for article with summary budget " +
                      std::to_string(summary_budget));
  }
  std::vector<TokenId> article = tokenizer.encode(example.article);
  std::vector<TokenId> summary = tokenizer.encode(example.summary);
  if (article.empty() || summary.empty()) {
    throw DegenerateInputError("example '" + example.id +
                               "' has an empty article or summary");
  }
  if (static_cast<int>(article.size()) > article_budget) article.resize(static_cast<std::size_t>(article_budget));
  if (static_cast<int>(summary.size()) > summary_budget) summary.resize(static_cast<std::size_t>(summary_budget));

  EncodedExample enc;
  enc.id = example.id;
  enc.tokens.reserve(article.size() + summary.size() + 3);
  enc.tokens.push_back(kBosToken);
  enc.tokens.insert(enc.tokens.end(), article.begin(), article.end());
  enc.sep_position = static_cast<int>(enc.tokens.size());
  enc.tokens.push_back(kSepToken);
  enc.tokens.insert(enc.tokens.end(), summary.begin(), summary.end());
  enc.tokens.push_back(kEosToken);
  enc.loss_mask.assign(enc.tokens.size(), false);
  for (std::size_t i = static_cast<std::size_t>(enc.sep_position) + 1;
       i < enc.tokens.size(); ++i) {
    enc.loss_mask[i] = true;
  }
  return enc;
}

std::vector<EncodedExample> encode_corpus(const Tokenizer& tokenizer,
                                          const Corpus& corpus, int max_len,
                                          int summary_budget) {
  std::vector<EncodedExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus) {
    out.push_back(encode_example(tokenizer, ex, max_len, summary_budget));
  }
  return out;
}

EncodedExample encode_article(const Tokenizer& tokenizer, const Example& example,
                              int max_len) {
  std::vector<TokenId> article = tokenizer.encode(example.article);
  if (article.empty()) {
    throw DegenerateInputError("example '" + example.id + "' has an empty article");
  }
  if (static_cast<int>(article.size()) > max_len - 2) {
    article.resize(static_cast<std::size_t>(max_len - 2));
  }
  EncodedExample enc;
  enc.id = example.id;
  enc.tokens.push_back(kBosToken);
  enc.tokens.insert(enc.tokens.end(), article.begin(), article.end());
  enc.tokens.push_back(kEosToken);
  enc.sep_position = 0;
  enc.loss_mask.assign(enc.tokens.size(), true);
  enc.loss_mask[0] = false;
  return enc;
}

Corpus load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus: " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_whitespace(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(line_no, "expected a JSON object");
    for (const char* field : {"article", "summary"}) {
      if (!j.contains(field) || !j[field].is_string()) {
        throw ParseError(line_no, std::string("missing string field \"") + field + "\"");
      }
    }
    Example ex;
    ex.id = j.contains("id") && j["id"].is_string()
                ? j["id"].get<std::string>()
                : "line" + std::to_string(line_no);
    ex.article = normalize_whitespace(j["article"].get<std::string>());
    ex.summary = normalize_whitespace(j["summary"].get<std::string>());
    if (ex.article.empty() || ex.summary.empty()) {
      throw ParseError(line_no, "empty article or summary");
    }
    if (j.contains("salient_mask")) {
      const auto& m = j["salient_mask"];
      if (!m.is_array()) throw ParseError(line_no, "\"salient_mask\" must be an array");
      for (const auto& b : m) {
        if (!b.is_boolean()) throw ParseError(line_no, "\"salient_mask\" entries must be booleans");
        ex.salient_mask.push_back(b.get<bool>());
      }
    }
    corpus.push_back(std::move(ex));
  }
  return corpus;
}

void save_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write corpus: " + path.string());
  for (const auto& ex : corpus) {
    nlohmann::json j = {{"id", ex.id}, {"article", ex.article}, {"summary", ex.summary}};
    if (!ex.salient_mask.empty()) {
      j["salient_mask"] = std::vector<bool>(ex.salient_mask);
    }
    out << j.dump() << '\n';
  }
}

CorpusSplits split(const Corpus& corpus, std::array<double, 3> fractions, Rng& rng) {
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split fractions sum to " + std::to_string(total) + ", not 1");
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  const auto n = static_cast<double>(corpus.size());
  const auto n_train = std::min(corpus.size(), static_cast<std::size_t>(std::llround(n * fractions[0])));
  const auto n_val = std::min(corpus.size() - n_train,
                              static_cast<std::size_t>(std::llround(n * fractions[1])));
  CorpusSplits out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Example& ex = corpus[order[i]];
    if (i < n_train) {
      out.train.push_back(ex);
    } else if (i < n_train + n_val) {
      out.val.push_back(ex);
    } else {
      out.test.push_back(ex);
    }
  }
  return out;
}

}  // namespace circuit_lab
