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

// Passive capture of attention and activations over a corpus.

#include <string>
#include <vector>

#include "circuit_lab/corpus.hpp"
#include "circuit_lab/model.hpp"
#include "circuit_lab/trace.hpp"

namespace circuit_lab {

// One trace per example, in corpus order. Each example's full token sequence
// is traced at its true length (no padding). Examples run in parallel and
// are placed by index.
template <typename Scalar>
TraceSet trace_corpus(const GptModel<Scalar>& model,
                      const std::vector<EncodedExample>& corpus,
                      const TraceConfig& config, const std::string& model_tag,
                      const ProjectionHook<Scalar>* hook = nullptr);

std::uint64_t corpus_fingerprint(const std::vector<EncodedExample>& corpus);

}  // namespace circuit_lab
