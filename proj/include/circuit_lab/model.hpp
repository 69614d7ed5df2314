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

// Decoder-only GPT-style transformer: learned token and position embeddings,
// pre-norm blocks (attention then MLP, each residual), final norm and an
// output head tied to the token embedding by default.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "circuit_lab/rng.hpp"
#include "circuit_lab/tensor.hpp"
#include "circuit_lab/trace.hpp"

namespace circuit_lab {

// Special token ids shared by the tokenizer and the model utilities.
inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kBosToken = 1;
inline constexpr TokenId kEosToken = 2;
inline constexpr TokenId kSepToken = 3;

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 64;
  int d_mlp = 256;
  int vocab_size = 512;
  int max_seq_len = 128;
  bool tie_lm_head = true;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

enum class Projection { kQuery = 0, kKey = 1, kValue = 2, kOutput = 3 };

const char* projection_name(Projection p);  // "q", "k", "v", "o"
Projection parse_projection(std::string_view name);

template <typename Scalar>
struct Block {
  Tensor<Scalar> ln1_gain, ln1_bias;
  Tensor<Scalar> w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Tensor<Scalar> ln2_gain, ln2_bias;
  Tensor<Scalar> w_in, b_in, w_out, b_out;

  const Tensor<Scalar>& weight(Projection p) const;
  const Tensor<Scalar>& bias(Projection p) const;
  Tensor<Scalar>& weight(Projection p);
};

template <typename Scalar>
struct NamedParameter {
  std::string name;
  int layer;  // -1 for embeddings, final norm and head
  Tensor<Scalar> tensor;
};

// Parameters are shared tensor handles, so the model is move-only; clone()
// makes an independent deep copy.
template <typename Scalar>
struct GptModel {
  ModelConfig config;
  Tensor<Scalar> token_embedding;     // [vocab x d]
  Tensor<Scalar> position_embedding;  // [max_seq_len x d]
  std::vector<Block<Scalar>> blocks;
  Tensor<Scalar> final_gain, final_bias;
  Tensor<Scalar> lm_head;  // [vocab x d]; undefined when tied

  GptModel() = default;
  GptModel(GptModel&&) noexcept = default;
  GptModel& operator=(GptModel&&) noexcept = default;
  GptModel(const GptModel&) = delete;
  GptModel& operator=(const GptModel&) = delete;

  // Weights and embeddings ~ Normal(0, 0.02), biases 0, norm gains 1. Draws
  // follow parameters() order.
  static GptModel init(const ModelConfig& config, Rng& rng);

  GptModel clone() const;

  template <typename Other>
  GptModel<Other> cast() const;

  // Stable order: tok_emb, pos_emb, layers.*, final_norm.*, lm_head.
  std::vector<NamedParameter<Scalar>> parameters() const;

  std::size_t count_params() const;

  // Sets requires_grad on every parameter from `keep(name, layer)`.
  void set_trainable(const std::function<bool(const std::string&, int)>& keep);

  const Tensor<Scalar>& output_weight() const {
    return config.tie_lm_head ? token_embedding : lm_head;
  }
};

// Closed form of the parameter count:
//   V·d + T·d + L·(4d² + 2·d·m + 9d + m) + 2d  (+ V·d when the head is untied)
// with V vocab, T context, L layers, d width, m MLP width. Per layer that is
// two norms (4d), four d×d projections with biases (4d² + 4d) and the MLP
// (2dm + m + d).
std::size_t count_params(const ModelConfig& config);

// Rewrites a projection output; used to splice adapters into the forward pass.
// Receives the projection input and the unmodified output.
template <typename Scalar>
using ProjectionHook = std::function<Tensor<Scalar>(
    int layer, Projection projection, const Tensor<Scalar>& input,
    const Tensor<Scalar>& output)>;

template <typename Scalar>
struct ForwardOptions {
  const TraceConfig* trace = nullptr;
  ForwardTrace* trace_out = nullptr;
  const ProjectionHook<Scalar>* hook = nullptr;
};

// Final-norm hidden states [T x d].
template <typename Scalar>
Tensor<Scalar> forward_hidden(const GptModel<Scalar>& model,
                              std::span<const TokenId> tokens,
                              const ForwardOptions<Scalar>& options = {});

template <typename Scalar>
Tensor<Scalar> output_logits(const GptModel<Scalar>& model,
                             const Tensor<Scalar>& hidden);

template <typename Scalar>
struct ForwardResult {
  Tensor<Scalar> logits;  // [T x V]
  std::optional<ForwardTrace> trace;
};

// Tracing copies intermediates only; logits are identical with or without it.
template <typename Scalar>
ForwardResult<Scalar> forward(const GptModel<Scalar>& model,
                              std::span<const TokenId> tokens,
                              const TraceConfig* trace = nullptr,
                              const ProjectionHook<Scalar>* hook = nullptr);

// Σ_i log p(y_i | x, y_<i) by teacher forcing over [BOS, x, SEP, y].
template <typename Scalar>
double sequence_log_prob(const GptModel<Scalar>& model,
                         std::span<const TokenId> article,
                         std::span<const TokenId> summary,
                         const ProjectionHook<Scalar>* hook = nullptr);

// Argmax continuation of `prompt`; stops after `eos` (not included), after
// max_new tokens, or when the context is full. Ties go to the lowest id.
template <typename Scalar>
std::vector<TokenId> generate_greedy(const GptModel<Scalar>& model,
                                     std::span<const TokenId> prompt,
                                     int max_new = 32, TokenId eos = kEosToken,
                                     const ProjectionHook<Scalar>* hook = nullptr);

// Checkpoint: "MICLCKP1", u32 version, u32-prefixed JSON text holding the
// config (and `metadata`, e.g. the vocabulary), u32 tensor count, then per
// tensor u16-prefixed name, u8 rank, u32 dims, raw little-endian f32 payload.
template <typename Scalar>
void save_model(const GptModel<Scalar>& model, const std::filesystem::path& path,
                const nlohmann::json& metadata = nlohmann::json::object());

template <typename Scalar>
struct LoadedModel {
  GptModel<Scalar> model;
  nlohmann::json metadata;
};

template <typename Scalar>
LoadedModel<Scalar> load_model(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

// ---------------------------------------------------------------------------

template <typename Scalar>
template <typename Other>
GptModel<Other> GptModel<Scalar>::cast() const {
  auto convert = [](const Tensor<Scalar>& t) {
    if (!t.defined()) return Tensor<Other>();
    return Tensor<Other>(t.shape(), t.value().template cast<Other>(),
                         t.requires_grad());
  };
  GptModel<Other> out;
  out.config = config;
  out.token_embedding = convert(token_embedding);
  out.position_embedding = convert(position_embedding);
  for (const auto& b : blocks) {
    Block<Other> c;
    c.ln1_gain = convert(b.ln1_gain);
    c.ln1_bias = convert(b.ln1_bias);
    c.w_q = convert(b.w_q);
    c.b_q = convert(b.b_q);
    c.w_k = convert(b.w_k);
    c.b_k = convert(b.b_k);
    c.w_v = convert(b.w_v);
    c.b_v = convert(b.b_v);
    c.w_o = convert(b.w_o);
    c.b_o = convert(b.b_o);
    c.ln2_gain = convert(b.ln2_gain);
    c.ln2_bias = convert(b.ln2_bias);
    c.w_in = convert(b.w_in);
    c.b_in = convert(b.b_in);
    c.w_out = convert(b.w_out);
    c.b_out = convert(b.b_out);
    out.blocks.push_back(std::move(c));
  }
  out.final_gain = convert(final_gain);
  out.final_bias = convert(final_bias);
  out.lm_head = convert(lm_head);
  return out;
}

}  // namespace circuit_lab
