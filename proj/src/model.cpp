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

#include "circuit_lab/model.hpp"

#include <algorithm>
#include <cmath>

#include "circuit_lab/binary_io.hpp"
#include "circuit_lab/error.hpp"

namespace circuit_lab {

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
  if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
  if (d_model < 1 || d_model % n_heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) +
                      ") must be a positive multiple of n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (d_mlp < 1) throw ConfigError("d_mlp must be >= 1");
  if (vocab_size < 4) throw ConfigError("vocab_size must be >= 4");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n_layers", n_layers},       {"n_heads", n_heads},
          {"d_model", d_model},         {"d_mlp", d_mlp},
          {"vocab_size", vocab_size},   {"max_seq_len", max_seq_len},
          {"tie_lm_head", tie_lm_head}, {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_model = j.value("d_model", c.d_model);
    c.d_mlp = j.value("d_mlp", 4 * c.d_model);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.tie_lm_head = j.value("tie_lm_head", c.tie_lm_head);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

const char* projection_name(Projection p) {
  switch (p) {
    case Projection::kQuery: return "q";
    case Projection::kKey: return "k";
    case Projection::kValue: return "v";
    case Projection::kOutput: return "o";
  }
  return "?";
}

Projection parse_projection(std::string_view name) {
  if (name == "q" || name == "Q") return Projection::kQuery;
  if (name == "k" || name == "K") return Projection::kKey;
  if (name == "v" || name == "V") return Projection::kValue;
  if (name == "o" || name == "O") return Projection::kOutput;
  throw ConfigError("unknown projection '" + std::string(name) +
                    "' (expected Q, K, V or O)");
}

template <typename Scalar>
const Tensor<Scalar>& Block<Scalar>::weight(Projection p) const {
  switch (p) {
    case Projection::kQuery: return w_q;
    case Projection::kKey: return w_k;
    case Projection::kValue: return w_v;
    case Projection::kOutput: return w_o;
  }
  return w_q;
}

template <typename Scalar>
Tensor<Scalar>& Block<Scalar>::weight(Projection p) {
  return const_cast<Tensor<Scalar>&>(std::as_const(*this).weight(p));
}

template <typename Scalar>
const Tensor<Scalar>& Block<Scalar>::bias(Projection p) const {
  switch (p) {
    case Projection::kQuery: return b_q;
    case Projection::kKey: return b_k;
    case Projection::kValue: return b_v;
    case Projection::kOutput: return b_o;
  }
  return b_q;
}

std::size_t count_params(const ModelConfig& c) {
  const std::size_t V = static_cast<std::size_t>(c.vocab_size);
  const std::size_t T = static_cast<std::size_t>(c.max_seq_len);
  const std::size_t L = static_cast<std::size_t>(c.n_layers);
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t m = static_cast<std::size_t>(c.d_mlp);
  std::size_t n = V * d + T * d + L * (4 * d * d + 2 * d * m + 9 * d + m) + 2 * d;
  if (!c.tie_lm_head) n += V * d;
  return n;
}

template <typename Scalar>
GptModel<Scalar> GptModel<Scalar>::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  const Index d = config.d_model;
  const Index m = config.d_mlp;
  GptModel model;
  model.config = config;
  model.token_embedding = Tensor<Scalar>(Shape{config.vocab_size, d});
  model.position_embedding = Tensor<Scalar>(Shape{config.max_seq_len, d});
  for (int l = 0; l < config.n_layers; ++l) {
    Block<Scalar> b;
    b.ln1_gain = Tensor<Scalar>(Shape{d});
    b.ln1_bias = Tensor<Scalar>(Shape{d});
    b.w_q = Tensor<Scalar>(Shape{d, d});
    b.b_q = Tensor<Scalar>(Shape{d});
    b.w_k = Tensor<Scalar>(Shape{d, d});
    b.b_k = Tensor<Scalar>(Shape{d});
    b.w_v = Tensor<Scalar>(Shape{d, d});
    b.b_v = Tensor<Scalar>(Shape{d});
    b.w_o = Tensor<Scalar>(Shape{d, d});
    b.b_o = Tensor<Scalar>(Shape{d});
    b.ln2_gain = Tensor<Scalar>(Shape{d});
    b.ln2_bias = Tensor<Scalar>(Shape{d});
    b.w_in = Tensor<Scalar>(Shape{m, d});
    b.b_in = Tensor<Scalar>(Shape{m});
    b.w_out = Tensor<Scalar>(Shape{d, m});
    b.b_out = Tensor<Scalar>(Shape{d});
    model.blocks.push_back(std::move(b));
  }
  model.final_gain = Tensor<Scalar>(Shape{d});
  model.final_bias = Tensor<Scalar>(Shape{d});
  if (!config.tie_lm_head) {
    model.lm_head = Tensor<Scalar>(Shape{config.vocab_size, d});
  }

  auto ends_with = [](const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& p : model.parameters()) {
    Scalar* data = p.tensor.data();
    if (ends_with(p.name, ".gain")) {
      std::fill(data, data + p.tensor.size(), Scalar(1));
    } else if (ends_with(p.name, ".weight") || ends_with(p.name, "_emb")) {
      for (Index i = 0; i < p.tensor.size(); ++i) {
        data[i] = static_cast<Scalar>(rng.normal(0.0, 0.02));
      }
    }
  }
  return model;
}

template <typename Scalar>
GptModel<Scalar> GptModel<Scalar>::clone() const {
  return cast<Scalar>();
}

template <typename Scalar>
std::vector<NamedParameter<Scalar>> GptModel<Scalar>::parameters() const {
  std::vector<NamedParameter<Scalar>> out;
  out.push_back({"tok_emb", -1, token_embedding});
  out.push_back({"pos_emb", -1, position_embedding});
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    const int li = static_cast<int>(l);
    out.push_back({p + "ln1.gain", li, b.ln1_gain});
    out.push_back({p + "ln1.bias", li, b.ln1_bias});
    out.push_back({p + "attn.q.weight", li, b.w_q});
    out.push_back({p + "attn.q.bias", li, b.b_q});
    out.push_back({p + "attn.k.weight", li, b.w_k});
    out.push_back({p + "attn.k.bias", li, b.b_k});
    out.push_back({p + "attn.v.weight", li, b.w_v});
    out.push_back({p + "attn.v.bias", li, b.b_v});
    out.push_back({p + "attn.o.weight", li, b.w_o});
    out.push_back({p + "attn.o.bias", li, b.b_o});
    out.push_back({p + "ln2.gain", li, b.ln2_gain});
    out.push_back({p + "ln2.bias", li, b.ln2_bias});
    out.push_back({p + "mlp.in.weight", li, b.w_in});
    out.push_back({p + "mlp.in.bias", li, b.b_in});
    out.push_back({p + "mlp.out.weight", li, b.w_out});
    out.push_back({p + "mlp.out.bias", li, b.b_out});
  }
  out.push_back({"final_norm.gain", -1, final_gain});
  out.push_back({"final_norm.bias", -1, final_bias});
  if (!config.tie_lm_head) out.push_back({"lm_head.weight", -1, lm_head});
  return out;
}

template <typename Scalar>
std::size_t GptModel<Scalar>::count_params() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += static_cast<std::size_t>(p.tensor.size());
  return n;
}

template <typename Scalar>
void GptModel<Scalar>::set_trainable(
    const std::function<bool(const std::string&, int)>& keep) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(keep(p.name, p.layer));
}

namespace {

template <typename Scalar>
void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw LengthError("empty token sequence");
  if (static_cast<int>(tokens.size()) > config.max_seq_len) {
    throw LengthError("sequence of " + std::to_string(tokens.size()) +
                      " tokens exceeds max_seq_len " +
                      std::to_string(config.max_seq_len));
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= config.vocab_size) {
      throw ShapeError("token id " + std::to_string(t) +
                       " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }
}

template <typename Scalar>
void copy_rows(const Matrix<Scalar>& m, Index first_row, std::vector<double>& out) {
  for (Index r = first_row; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      out.push_back(static_cast<double>(m(r, c)));
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> forward_hidden(const GptModel<Scalar>& model,
                              std::span<const TokenId> tokens,
                              const ForwardOptions<Scalar>& options) {
  const ModelConfig& cfg = model.config;
  check_tokens<Scalar>(cfg, tokens);
  const Index T = static_cast<Index>(tokens.size());

  const TraceConfig* tc = options.trace;
  ForwardTrace* trace = options.trace_out;
  if (tc && !trace) throw ContractError("trace config given without output");
  Index first_row = 0;
  if (tc) {
    tc->validate();
    first_row = tc->positions == TracePositions::kLastOnly ? T - 1 : 0;
    *trace = ForwardTrace{};
    trace->n_layers = cfg.n_layers;
    trace->n_heads = cfg.n_heads;
    trace->d_model = cfg.d_model;
    trace->d_mlp = cfg.d_mlp;
    trace->token_count = static_cast<int>(T);
    trace->query_rows = static_cast<int>(T - first_row);
    const std::size_t R = static_cast<std::size_t>(trace->query_rows);
    if (tc->capture_attention) {
      trace->attention.reserve(static_cast<std::size_t>(cfg.n_layers * cfg.n_heads) *
                               R * static_cast<std::size_t>(T));
    }
    if (tc->capture_mlp_hidden) {
      trace->mlp_hidden.reserve(static_cast<std::size_t>(cfg.n_layers * cfg.d_mlp) * R);
    }
    if (tc->capture_residual) {
      trace->residual.reserve(static_cast<std::size_t>(cfg.n_layers * cfg.d_model) * R);
    }
  }

  auto project = [&](int layer, Projection p, const Tensor<Scalar>& input) {
    const auto& block = model.blocks[static_cast<std::size_t>(layer)];
    Tensor<Scalar> out = linear(input, block.weight(p), block.bias(p));
    if (options.hook && *options.hook) out = (*options.hook)(layer, p, input, out);
    return out;
  };

  std::vector<Index> positions(static_cast<std::size_t>(T));
  std::iota(positions.begin(), positions.end(), Index{0});
  Tensor<Scalar> x = add(embedding(model.token_embedding, tokens),
                         gather_rows(model.position_embedding,
                                     std::span<const Index>(positions)));

  std::vector<Matrix<Scalar>> weights;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& b = model.blocks[static_cast<std::size_t>(l)];
    Tensor<Scalar> h = layer_norm(x, b.ln1_gain, b.ln1_bias);
    Tensor<Scalar> q = project(l, Projection::kQuery, h);
    Tensor<Scalar> k = project(l, Projection::kKey, h);
    Tensor<Scalar> v = project(l, Projection::kValue, h);
    const bool want_attention = tc && tc->capture_attention;
    Tensor<Scalar> att = multi_head_attention(q, k, v, Index{cfg.n_heads}, true,
                                              want_attention ? &weights : nullptr);
    if (want_attention) {
      for (const auto& w : weights) copy_rows(w, first_row, trace->attention);
    }
    x = add(x, project(l, Projection::kOutput, att));

    Tensor<Scalar> h2 = layer_norm(x, b.ln2_gain, b.ln2_bias);
    Tensor<Scalar> a = gelu(linear(h2, b.w_in, b.b_in));
    if (tc && tc->capture_mlp_hidden) copy_rows(a.value(), first_row, trace->mlp_hidden);
    x = add(x, linear(a, b.w_out, b.b_out));
    if (tc && tc->capture_residual) copy_rows(x.value(), first_row, trace->residual);
  }
  return layer_norm(x, model.final_gain, model.final_bias);
}

template <typename Scalar>
Tensor<Scalar> output_logits(const GptModel<Scalar>& model,
                             const Tensor<Scalar>& hidden) {
  return matmul_nt(hidden, model.output_weight());
}

template <typename Scalar>
ForwardResult<Scalar> forward(const GptModel<Scalar>& model,
                              std::span<const TokenId> tokens,
                              const TraceConfig* trace,
                              const ProjectionHook<Scalar>* hook) {
  ForwardResult<Scalar> result;
  ForwardOptions<Scalar> options;
  options.hook = hook;
  if (trace) {
    result.trace.emplace();
    options.trace = trace;
    options.trace_out = &*result.trace;
  }
  result.logits = output_logits(model, forward_hidden(model, tokens, options));
  return result;
}

template <typename Scalar>
double sequence_log_prob(const GptModel<Scalar>& model,
                         std::span<const TokenId> article,
                         std::span<const TokenId> summary,
                         const ProjectionHook<Scalar>* hook) {
  if (summary.empty()) return 0.0;
  std::vector<TokenId> seq;
  seq.reserve(article.size() + summary.size() + 2);
  seq.push_back(kBosToken);
  seq.insert(seq.end(), article.begin(), article.end());
  seq.push_back(kSepToken);
  seq.insert(seq.end(), summary.begin(), summary.end());

  ForwardOptions<Scalar> options;
  options.hook = hook;
  const Tensor<Scalar> hidden = forward_hidden(model, seq, options);
  // Position article.size() + 1 is SEP, whose output predicts summary[0].
  std::vector<Index> rows(summary.size());
  std::iota(rows.begin(), rows.end(), static_cast<Index>(article.size() + 1));
  const Tensor<Scalar> logits =
      output_logits(model, gather_rows(hidden, std::span<const Index>(rows)));
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const auto row = logits.value().row(i).template cast<double>();
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += row(summary[static_cast<std::size_t>(i)]) - lse;
  }
  return total;
}

template <typename Scalar>
std::vector<TokenId> generate_greedy(const GptModel<Scalar>& model,
                                     std::span<const TokenId> prompt,
                                     int max_new, TokenId eos,
                                     const ProjectionHook<Scalar>* hook) {
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  ForwardOptions<Scalar> options;
  options.hook = hook;
  for (int step = 0; step < max_new; ++step) {
    if (static_cast<int>(seq.size()) >= model.config.max_seq_len) break;
    const Tensor<Scalar> hidden = forward_hidden(model, seq, options);
    const Index last = hidden.rows() - 1;
    const Tensor<Scalar> logits = output_logits(
        model, gather_rows(hidden, std::span<const Index>(&last, 1)));
    const auto& row = logits.value();
    Index best = 0;
    for (Index j = 1; j < row.cols(); ++j) {
      if (row(0, j) > row(0, best)) best = j;
    }
    const TokenId next = static_cast<TokenId>(best);
    if (next == eos) break;
    seq.push_back(next);
    out.push_back(next);
  }
  return out;
}

namespace {
constexpr std::string_view kCheckpointMagic = "MICLCKP1";
}

template <typename Scalar>
void save_model(const GptModel<Scalar>& model, const std::filesystem::path& path,
                const nlohmann::json& metadata) {
  nlohmann::json header = {{"config", model.config.to_json()},
                           {"metadata", metadata}};
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.long_string(header.dump());
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  std::vector<float> payload;
  for (const auto& p : params) {
    w.short_string(p.name);
    w.u8(static_cast<std::uint8_t>(p.tensor.rank()));
    for (Index d : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    payload.assign(static_cast<std::size_t>(p.tensor.size()), 0.0f);
    for (Index i = 0; i < p.tensor.size(); ++i) {
      payload[static_cast<std::size_t>(i)] = static_cast<float>(p.tensor.data()[i]);
    }
    w.f32_array(payload);
  }
  w.write_file(path);
}

template <typename Scalar>
LoadedModel<Scalar> load_model(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic(kCheckpointMagic);
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(version_at,
                      "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t header_at = r.offset();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.long_string());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(header_at, std::string("bad config block: ") + e.what());
  }
  LoadedModel<Scalar> loaded;
  Rng rng(0);
  ModelConfig config = ModelConfig::from_json(header.at("config"));
  loaded.model = GptModel<Scalar>::init(config, rng);
  loaded.metadata = header.value("metadata", nlohmann::json::object());

  auto params = loaded.model.parameters();
  const std::uint64_t count_at = r.offset();
  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw FormatError(count_at, "expected " + std::to_string(params.size()) +
                                    " tensors, file has " + std::to_string(count));
  }
  std::vector<float> payload;
  for (auto& p : params) {
    const std::uint64_t at = r.offset();
    const std::string name = r.short_string();
    if (name != p.name) {
      throw FormatError(at, "expected tensor '" + p.name + "', found '" + name + "'");
    }
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != p.tensor.shape()) {
      throw FormatError(at, "tensor '" + name + "' has shape " +
                                shape_string(shape) + ", expected " +
                                shape_string(p.tensor.shape()));
    }
    payload.resize(static_cast<std::size_t>(p.tensor.size()));
    r.f32_array(payload);
    for (Index i = 0; i < p.tensor.size(); ++i) {
      p.tensor.data()[i] = static_cast<Scalar>(payload[static_cast<std::size_t>(i)]);
    }
  }
  r.expect_end();
  return loaded;
}

#define CIRCUIT_LAB_INSTANTIATE(S)                                            \
  template struct Block<S>;                                                   \
  template struct GptModel<S>;                                                \
  template Tensor<S> forward_hidden(const GptModel<S>&,                       \
                                    std::span<const TokenId>,                 \
                                    const ForwardOptions<S>&);                \
  template Tensor<S> output_logits(const GptModel<S>&, const Tensor<S>&);     \
  template ForwardResult<S> forward(const GptModel<S>&,                       \
                                    std::span<const TokenId>,                 \
                                    const TraceConfig*,                       \
                                    const ProjectionHook<S>*);                \
  template double sequence_log_prob(const GptModel<S>&,                       \
                                    std::span<const TokenId>,                 \
                                    std::span<const TokenId>,                 \
                                    const ProjectionHook<S>*);                \
  template std::vector<TokenId> generate_greedy(                              \
      const GptModel<S>&, std::span<const TokenId>, int, TokenId,             \
      const ProjectionHook<S>*);                                              \
  template void save_model(const GptModel<S>&, const std::filesystem::path&,  \
                           const nlohmann::json&);                            \
  template LoadedModel<S> load_model(const std::filesystem::path&);

CIRCUIT_LAB_INSTANTIATE(float)
CIRCUIT_LAB_INSTANTIATE(double)

#undef CIRCUIT_LAB_INSTANTIATE

}  // namespace circuit_lab
