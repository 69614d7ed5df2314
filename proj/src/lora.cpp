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

#include "circuit_lab/lora.hpp"

#include <algorithm>
#include <set>

#include "circuit_lab/binary_io.hpp"
#include "circuit_lab/error.hpp"
#include "circuit_lab/instrumentation.hpp"

namespace circuit_lab {

void LoraConfig::validate(const ModelConfig& model) const {
  if (rank < 1) throw ConfigError("lora rank must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("lora alpha must be positive");
  if (projections.empty()) throw ConfigError("lora needs at least one target projection");
  if (std::set<Projection>(projections.begin(), projections.end()).size() !=
      projections.size()) {
    throw ConfigError("duplicate lora target projection");
  }
  if (target_layers) {
    if (target_layers->empty()) throw ConfigError("lora target layer set is empty");
    std::set<int> seen;
    for (int l : *target_layers) {
      if (l < 0 || l >= model.n_layers) {
        throw ConfigError("lora target layer " + std::to_string(l) +
                          " outside model depth " + std::to_string(model.n_layers));
      }
      if (!seen.insert(l).second) {
        throw ConfigError("duplicate lora target layer " + std::to_string(l));
      }
    }
  }
  if (!(learning_rate > 0.0)) throw ConfigError("lora learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("lora batch_size must be >= 1");
}

std::vector<int> LoraConfig::layers(const ModelConfig& model) const {
  std::vector<int> out;
  if (target_layers) {
    out = *target_layers;
    std::sort(out.begin(), out.end());
  } else {
    for (int l = 0; l < model.n_layers; ++l) out.push_back(l);
  }
  return out;
}

nlohmann::json LoraConfig::to_json() const {
  std::vector<std::string> projs;
  for (auto p : projections) projs.emplace_back(projection_name(p));
  nlohmann::json j = {{"rank", rank},
                      {"alpha", alpha},
                      {"projections", projs},
                      {"learning_rate", learning_rate},
                      {"batch_size", batch_size},
                      {"seed", seed}};
  if (target_layers) j["target_layers"] = *target_layers;
  return j;
}

LoraConfig LoraConfig::from_json(const nlohmann::json& j) {
  LoraConfig c;
  try {
    c.rank = j.value("rank", c.rank);
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("projections")) {
      c.projections.clear();
      for (const auto& p : j.at("projections")) {
        c.projections.push_back(parse_projection(p.get<std::string>()));
      }
    }
    if (j.contains("target_layers")) {
      c.target_layers = j.at("target_layers").get<std::vector<int>>();
    }
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("lora config: ") + e.what());
  }
  return c;
}

template <typename Scalar>
AdaptedModel<Scalar> AdaptedModel<Scalar>::clone() const {
  AdaptedModel out;
  out.base = base.clone();
  out.config = config;
  for (const auto& a : adapters) {
    out.adapters.push_back({a.layer, a.projection, a.a.clone(), a.b.clone(), a.scale});
  }
  return out;
}

template <typename Scalar>
const LoraAdapter<Scalar>* AdaptedModel<Scalar>::find(int layer,
                                                      Projection projection) const {
  for (const auto& a : adapters) {
    if (a.layer == layer && a.projection == projection) return &a;
  }
  return nullptr;
}

template <typename Scalar>
ProjectionHook<Scalar> AdaptedModel<Scalar>::hook() const {
  // Index by layer * 4 + projection for constant-time lookup.
  std::vector<const LoraAdapter<Scalar>*> table(
      static_cast<std::size_t>(base.config.n_layers) * 4, nullptr);
  for (const auto& a : adapters) {
    table[static_cast<std::size_t>(a.layer) * 4 + static_cast<std::size_t>(a.projection)] = &a;
  }
  return [table = std::move(table)](int layer, Projection p, const Tensor<Scalar>& input,
                                    const Tensor<Scalar>& output) -> Tensor<Scalar> {
    const auto* a = table[static_cast<std::size_t>(layer) * 4 + static_cast<std::size_t>(p)];
    if (a == nullptr) return output;
    return add(output, scale(matmul_nt(matmul_nt(input, a->a), a->b), a->scale));
  };
}

template <typename Scalar>
AdaptedModel<Scalar> attach(const GptModel<Scalar>& model, const LoraConfig& config,
                            Rng& rng) {
  config.validate(model.config);
  AdaptedModel<Scalar> adapted;
  adapted.base = model.clone();
  adapted.base.set_trainable([](const std::string&, int) { return false; });
  adapted.config = config;
  std::vector<Projection> projs = config.projections;
  std::sort(projs.begin(), projs.end());
  const Index r = config.rank;
  for (int layer : config.layers(model.config)) {
    for (Projection p : projs) {
      const auto& w = model.blocks[static_cast<std::size_t>(layer)].weight(p);
      LoraAdapter<Scalar> a;
      a.layer = layer;
      a.projection = p;
      a.a = Tensor<Scalar>(Shape{r, w.cols()}, true);
      a.b = Tensor<Scalar>(Shape{w.rows(), r}, true);
      a.scale = static_cast<Scalar>(config.scale());
      for (Index i = 0; i < a.a.size(); ++i) {
        a.a.data()[i] = static_cast<Scalar>(rng.normal(0.0, 0.02));
      }
      adapted.adapters.push_back(std::move(a));
    }
  }
  return adapted;
}

template <typename Scalar>
ForwardResult<Scalar> adapted_forward(const AdaptedModel<Scalar>& adapted,
                                      std::span<const TokenId> tokens,
                                      const TraceConfig* trace) {
  const ProjectionHook<Scalar> hook = adapted.hook();
  return forward(adapted.base, tokens, trace, &hook);
}

template <typename Scalar>
GptModel<Scalar> merge(const AdaptedModel<Scalar>& adapted) {
  GptModel<Scalar> merged = adapted.base.clone();
  for (const auto& a : adapted.adapters) {
    auto& w = merged.blocks[static_cast<std::size_t>(a.layer)].weight(a.projection);
    w.value().noalias() += a.scale * (a.b.value() * a.a.value());
  }
  return merged;
}

template <typename Scalar>
std::size_t count_trainable(const AdaptedModel<Scalar>& adapted) {
  std::size_t n = 0;
  for (const auto& a : adapted.adapters) {
    n += static_cast<std::size_t>(a.a.size() + a.b.size());
  }
  return n;
}

std::size_t count_lora_params(const ModelConfig& model, const LoraConfig& config) {
  config.validate(model);
  const auto d = static_cast<std::size_t>(model.d_model);
  const auto r = static_cast<std::size_t>(config.rank);
  // Every attention projection is d -> d.
  return config.layers(model).size() * config.projections.size() * r * (d + d);
}

template <typename Scalar>
std::vector<Tensor<Scalar>> LoraObjective<Scalar>::trainable() const {
  std::vector<Tensor<Scalar>> out;
  for (const auto& a : adapted_->adapters) {
    out.push_back(a.a);
    out.push_back(a.b);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> LoraObjective<Scalar>::example_loss(const EncodedExample& example) const {
  const ProjectionHook<Scalar> hook = adapted_->hook();
  return example_nll(adapted_->base, example, &hook);
}

template <typename Scalar>
std::unique_ptr<Objective<Scalar>> LoraObjective<Scalar>::replicate() const {
  auto copy = std::make_shared<AdaptedModel<Scalar>>(adapted_->clone());
  auto obj = std::make_unique<LoraObjective<Scalar>>(*copy);
  obj->owned_ = std::move(copy);
  return obj;
}

TrainConfig lora_train_config(const LoraConfig& lora, TrainConfig config) {
  config.learning_rate = lora.learning_rate;
  config.batch_size = lora.batch_size;
  config.seed = lora.seed;
  config.trainable_layers.reset();
  return config;
}

template <typename Scalar>
TrainHistory train_lora(AdaptedModel<Scalar>& adapted,
                        std::span<const EncodedExample> train_set,
                        std::span<const EncodedExample> val_set,
                        const TrainConfig& config, const EpochCallback& on_epoch) {
  adapted.base.set_trainable([](const std::string&, int) { return false; });
  LoraObjective<Scalar> objective(adapted);
  return fit<Scalar>(objective, train_set, val_set, config, on_epoch);
}

template <typename Scalar>
TraceSet trace_corpus(const AdaptedModel<Scalar>& adapted,
                      const std::vector<EncodedExample>& corpus,
                      const TraceConfig& config, const std::string& model_tag) {
  const ProjectionHook<Scalar> hook = adapted.hook();
  return trace_corpus(adapted.base, corpus, config, model_tag, &hook);
}

namespace {

constexpr std::string_view kAdapterMagic = "MICLLORA";

std::string adapter_name(int layer, Projection p, const char* factor) {
  return "layers." + std::to_string(layer) + ".attn." + projection_name(p) + "." + factor;
}

}  // namespace

template <typename Scalar>
void save_adapters(const AdaptedModel<Scalar>& adapted, const std::filesystem::path& path) {
  const nlohmann::json header = {{"lora", adapted.config.to_json()},
                                 {"model", adapted.base.config.to_json()}};
  ByteWriter w;
  w.bytes(kAdapterMagic);
  w.u32(kAdapterFormatVersion);
  w.long_string(header.dump());
  w.u32(static_cast<std::uint32_t>(2 * adapted.adapters.size()));
  std::vector<float> payload;
  for (const auto& a : adapted.adapters) {
    for (const auto& [factor, t] : {std::pair{"lora_a", &a.a}, std::pair{"lora_b", &a.b}}) {
      w.short_string(adapter_name(a.layer, a.projection, factor));
      w.u8(static_cast<std::uint8_t>(t->rank()));
      for (Index d : t->shape()) w.u32(static_cast<std::uint32_t>(d));
      payload.assign(t->data(), t->data() + t->size());
      w.f32_array(payload);
    }
  }
  w.write_file(path);
}

template <typename Scalar>
AdaptedModel<Scalar> load_adapters(const GptModel<Scalar>& base,
                                   const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic(kAdapterMagic);
  const std::uint64_t version_at = r.offset();
  if (const auto v = r.u32(); v != kAdapterFormatVersion) {
    throw FormatError(version_at, "unsupported adapter version " + std::to_string(v));
  }
  const std::uint64_t header_at = r.offset();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.long_string());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(header_at, std::string("bad adapter header: ") + e.what());
  }
  const LoraConfig config = LoraConfig::from_json(header.at("lora"));
  if (ModelConfig::from_json(header.at("model")) != base.config) {
    throw ConfigError("adapter file was trained against a different model config");
  }
  Rng rng(config.seed);
  AdaptedModel<Scalar> adapted = attach(base, config, rng);
  const std::uint64_t count_at = r.offset();
  if (const auto n = r.u32(); n != 2 * adapted.adapters.size()) {
    throw FormatError(count_at, "expected " + std::to_string(2 * adapted.adapters.size()) +
                                    " tensors, file has " + std::to_string(n));
  }
  std::vector<float> payload;
  for (auto& a : adapted.adapters) {
    for (const auto& [factor, t] : {std::pair{"lora_a", &a.a}, std::pair{"lora_b", &a.b}}) {
      const std::uint64_t at = r.offset();
      const std::string name = r.short_string();
      const std::string want = adapter_name(a.layer, a.projection, factor);
      if (name != want) {
        throw FormatError(at, "expected tensor '" + want + "', found '" + name + "'");
      }
      Shape shape(r.u8());
      for (auto& d : shape) d = r.u32();
      if (shape != t->shape()) {
        throw FormatError(at, "tensor '" + name + "' has shape " + shape_string(shape));
      }
      payload.resize(static_cast<std::size_t>(t->size()));
      r.f32_array(payload);
      for (Index i = 0; i < t->size(); ++i) {
        t->data()[i] = static_cast<Scalar>(payload[static_cast<std::size_t>(i)]);
      }
    }
  }
  r.expect_end();
  return adapted;
}

#define CIRCUIT_LAB_INSTANTIATE(S)                                                   \
  template struct AdaptedModel<S>;                                                   \
  template AdaptedModel<S> attach(const GptModel<S>&, const LoraConfig&, Rng&);      \
  template ForwardResult<S> adapted_forward(const AdaptedModel<S>&,                  \
                                            std::span<const TokenId>,                \
                                            const TraceConfig*);                     \
  template GptModel<S> merge(const AdaptedModel<S>&);                                \
  template std::size_t count_trainable(const AdaptedModel<S>&);                      \
  template class LoraObjective<S>;                                                   \
  template TrainHistory train_lora(AdaptedModel<S>&, std::span<const EncodedExample>, \
                                   std::span<const EncodedExample>, const TrainConfig&, \
                                   const EpochCallback&);                            \
  template TraceSet trace_corpus(const AdaptedModel<S>&,                             \
                                 const std::vector<EncodedExample>&,                 \
                                 const TraceConfig&, const std::string&);            \
  template void save_adapters(const AdaptedModel<S>&, const std::filesystem::path&); \
  template AdaptedModel<S> load_adapters(const GptModel<S>&, const std::filesystem::path&);

CIRCUIT_LAB_INSTANTIATE(float)
CIRCUIT_LAB_INSTANTIATE(double)

#undef CIRCUIT_LAB_INSTANTIATE

}  // namespace circuit_lab
