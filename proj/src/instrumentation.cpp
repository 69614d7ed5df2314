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

#include "circuit_lab/instrumentation.hpp"

#include "circuit_lab/error.hpp"
#include "circuit_lab/parallel.hpp"

namespace circuit_lab {

std::uint64_t corpus_fingerprint(const std::vector<EncodedExample>& corpus) {
  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(corpus.size());
  for (const auto& ex : corpus) seqs.push_back(ex.tokens);
  return fingerprint_sequences(seqs);
}

template <typename Scalar>
TraceSet trace_corpus(const GptModel<Scalar>& model,
                      const std::vector<EncodedExample>& corpus,
                      const TraceConfig& config, const std::string& model_tag,
                      const ProjectionHook<Scalar>* hook) {
  if (corpus.empty()) throw DegenerateInputError("trace_corpus: empty corpus");
  config.validate();
  for (const auto& ex : corpus) {
    if (static_cast<int>(ex.tokens.size()) > model.config.max_seq_len) {
      throw LengthError("example '" + ex.id + "' does not fit the context");
    }
  }
  TraceSet set;
  set.model_tag = model_tag;
  set.n_layers = model.config.n_layers;
  set.n_heads = model.config.n_heads;
  set.d_model = model.config.d_model;
  set.d_mlp = model.config.d_mlp;
  set.config = config;
  set.fingerprint = corpus_fingerprint(corpus);
  set.traces.resize(corpus.size());
  parallel_for(corpus.size(), [&](unsigned, std::size_t i) {
    ForwardOptions<Scalar> options;
    options.trace = &config;
    options.trace_out = &set.traces[i];
    options.hook = hook;
    forward_hidden(model, std::span<const TokenId>(corpus[i].tokens), options);
    set.traces[i].example_id = corpus[i].id;
  });
  return set;
}

template TraceSet trace_corpus(const GptModel<float>&, const std::vector<EncodedExample>&,
                               const TraceConfig&, const std::string&,
                               const ProjectionHook<float>*);
template TraceSet trace_corpus(const GptModel<double>&, const std::vector<EncodedExample>&,
                               const TraceConfig&, const std::string&,
                               const ProjectionHook<double>*);

}  // namespace circuit_lab
