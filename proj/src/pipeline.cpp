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

#include "circuit_lab/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include "circuit_lab/csv.hpp"
#include "circuit_lab/error.hpp"
#include "circuit_lab/instrumentation.hpp"
#include "circuit_lab/parallel.hpp"

namespace circuit_lab {

namespace fs = std::filesystem;

PipelineConfig::PipelineConfig() {
  pretrain.learning_rate = 1e-3;
  pretrain.max_epochs = 6;
  pretrain.patience = 3;
  finetune.learning_rate = 3e-3;
  finetune.max_epochs = 20;
  finetune.patience = 6;
  lora.learning_rate = 5e-3;
  lora_train.max_epochs = 20;
  lora_train.patience = 6;
  set_seed(0);
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  corpus.seed = s;
  model.seed = s;
  pretrain.seed = s + 1;
  finetune.seed = s + 2;
  lora.seed = s + 3;
  lora_train.seed = s + 3;
}

void PipelineConfig::validate() const {
  if (!corpus_path) corpus.validate();
  double total = 0.0;
  for (double f : split) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  pretrain.validate();
  finetune.validate();
  lora_train.validate();
  if (trace_examples < 1) throw ConfigError("trace_examples must be >= 1");
  if (eval_examples < 1) throw ConfigError("eval_examples must be >= 1");
  if (circuit.k < 1 || circuit.k > model.n_layers) {
    throw ConfigError("circuit k must be in [1, n_layers]");
  }
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json j = {{"corpus", corpus.to_json()},
                      {"split", split},
                      {"model", model.to_json()},
                      {"pretrain", pretrain.to_json()},
                      {"finetune", finetune.to_json()},
                      {"lora", lora.to_json()},
                      {"lora_train", lora_train.to_json()},
                      {"circuit",
                       {{"k", circuit.k},
                        {"head_quantile", circuit.head_quantile},
                        {"score", circuit_score_name(circuit.score)},
                        {"top_neurons", circuit.top_neurons}}},
                      {"analysis",
                       {{"kl_direction",
                         diff.direction == KlDirection::kPreToPost ? "pre||post" : "post||pre"},
                        {"activation_source", activation_source_name(diff.source)},
                        {"top_n", diff.top_n}}},
                      {"trace_examples", trace_examples},
                      {"eval_examples", eval_examples},
                      {"skip_lora", skip_lora},
                      {"seed", seed}};
  if (corpus_path) j["corpus_path"] = corpus_path->string();
  return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    // Seed first so explicit per-stage seeds below still win.
    if (j.contains("seed")) c.set_seed(j.at("seed").get<std::uint64_t>());
    auto merge = [](const nlohmann::json& defaults, const nlohmann::json& given) {
      nlohmann::json out = defaults;
      out.update(given);
      return out;
    };
    if (j.contains("corpus")) c.corpus = SyntheticSpec::from_json(merge(c.corpus.to_json(), j.at("corpus")));
    if (j.contains("corpus_path")) c.corpus_path = j.at("corpus_path").get<std::string>();
    if (j.contains("split")) c.split = j.at("split").get<std::array<double, 3>>();
    if (j.contains("model")) c.model = ModelConfig::from_json(merge(c.model.to_json(), j.at("model")));
    for (auto [key, dst] : {std::pair{"pretrain", &c.pretrain}, std::pair{"finetune", &c.finetune},
                            std::pair{"lora_train", &c.lora_train}}) {
      if (j.contains(key)) *dst = TrainConfig::from_json(merge(dst->to_json(), j.at(key)));
    }
    if (j.contains("lora")) c.lora = LoraConfig::from_json(merge(c.lora.to_json(), j.at("lora")));
    if (j.contains("circuit")) {
      const auto& cj = j.at("circuit");
      c.circuit.k = cj.value("k", c.circuit.k);
      c.circuit.head_quantile = cj.value("head_quantile", c.circuit.head_quantile);
      c.circuit.top_neurons = cj.value("top_neurons", c.circuit.top_neurons);
      if (cj.contains("score")) c.circuit.score = parse_circuit_score(cj.at("score").get<std::string>());
    }
    if (j.contains("analysis")) {
      const auto& aj = j.at("analysis");
      if (aj.contains("kl_direction")) {
        const auto d = aj.at("kl_direction").get<std::string>();
        if (d == "pre||post") {
          c.diff.direction = KlDirection::kPreToPost;
        } else if (d == "post||pre") {
          c.diff.direction = KlDirection::kPostToPre;
        } else {
          throw ConfigError("kl_direction must be 'pre||post' or 'post||pre'");
        }
      }
      if (aj.contains("activation_source")) {
        c.diff.source = parse_activation_source(aj.at("activation_source").get<std::string>());
      }
      c.diff.top_n = aj.value("top_n", c.diff.top_n);
    }
    c.trace_examples = j.value("trace_examples", c.trace_examples);
    c.eval_examples = j.value("eval_examples", c.eval_examples);
    c.skip_lora = j.value("skip_lora", c.skip_lora);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

PreparedData prepare_data(const PipelineConfig& config) {
  config.validate();
  Corpus corpus;
  if (config.corpus_path) {
    corpus = load_jsonl(*config.corpus_path);
  } else {
    Rng rng(config.corpus.seed);
    corpus = generate_synthetic(config.corpus, rng);
  }
  PreparedData data;
  data.tokenizer = Tokenizer::build(corpus);
  Rng split_rng = Rng(config.seed).fork(0x73706c6974ull);
  data.splits = split(corpus, config.split, split_rng);
  const int max_len = config.model.max_seq_len;
  data.train = encode_corpus(data.tokenizer, data.splits.train, max_len);
  data.val = encode_corpus(data.tokenizer, data.splits.val, max_len);
  data.test = encode_corpus(data.tokenizer, data.splits.test, max_len);
  for (const auto& ex : data.splits.train) data.lm_train.push_back(encode_article(data.tokenizer, ex, max_len));
  for (const auto& ex : data.splits.val) data.lm_val.push_back(encode_article(data.tokenizer, ex, max_len));
  if (data.train.empty() || data.val.empty() || data.test.empty()) {
    throw DegenerateInputError("corpus of " + std::to_string(corpus.size()) +
                               " examples leaves an empty split");
  }
  return data;
}

void save_tokenizer(const Tokenizer& tokenizer, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ReportError("cannot write " + path.string());
  out << nlohmann::json(tokenizer.vocab()).dump() << '\n';
}

Tokenizer load_tokenizer(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open vocabulary " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return Tokenizer::from_vocab(j.get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("vocabulary " + path.string() + " is malformed: " + e.what());
  }
}

StageResult pretrain_base(const PipelineConfig& config, const PreparedData& data) {
  ModelConfig mc = config.model;
  mc.vocab_size = data.tokenizer.size();
  Rng rng(mc.seed);
  StageResult r{GptModel<float>::init(mc, rng), {}};
  r.history = train<float>(r.model, data.lm_train, data.lm_val, config.pretrain);
  return r;
}

StageResult finetune_model(const GptModel<float>& base, const TrainConfig& train_config,
                           const PreparedData& data, std::optional<std::vector<int>> layers) {
  TrainConfig tc = train_config;
  if (layers) tc.trainable_layers = std::move(layers);
  StageResult r{base.clone(), {}};
  r.history = train<float>(r.model, data.train, data.val, tc);
  r.model.set_trainable([](const std::string&, int) { return false; });
  return r;
}

LoraResult train_adapters(const GptModel<float>& base, const LoraConfig& lora,
                          const TrainConfig& train_config, const PreparedData& data) {
  Rng rng(lora.seed);
  LoraResult r{attach(base, lora, rng), {}};
  r.history = train_lora<float>(r.adapted, data.train, data.val, lora_train_config(lora, train_config));
  return r;
}

std::vector<EncodedExample> trace_inputs(const PreparedData& data, std::size_t limit) {
  const std::size_t n = std::min(limit, data.test.size());
  return {data.test.begin(), data.test.begin() + static_cast<std::ptrdiff_t>(n)};
}

TraceConfig pipeline_trace_config() {
  TraceConfig tc;
  tc.capture_attention = true;
  tc.capture_mlp_hidden = true;
  tc.capture_residual = false;
  tc.positions = TracePositions::kAll;
  return tc;
}

template <typename Scalar>
Eigen::MatrixXd pooled_latents(const GptModel<Scalar>& model, const std::vector<EncodedExample>& inputs,
                               const ProjectionHook<Scalar>* hook) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(inputs.size()), model.config.d_model);
  parallel_for(inputs.size(), [&](unsigned, std::size_t i) {
    ForwardOptions<Scalar> options;
    options.hook = hook;
    const Tensor<Scalar> h = forward_hidden(model, std::span<const TokenId>(inputs[i].tokens), options);
    out.row(static_cast<Eigen::Index>(i)) = h.value().colwise().mean().template cast<double>();
  });
  return out;
}

template Eigen::MatrixXd pooled_latents(const GptModel<float>&, const std::vector<EncodedExample>&,
                                        const ProjectionHook<float>*);
template Eigen::MatrixXd pooled_latents(const GptModel<double>&, const std::vector<EncodedExample>&,
                                        const ProjectionHook<double>*);

std::vector<std::string> pipeline_artifacts(const PipelineConfig& config) {
  std::vector<std::string> files = {
      "manifest.json",          "config.json",           "vocab.json",
      "corpus/train.jsonl",     "corpus/val.jsonl",      "corpus/test.jsonl",
      "models/base.ckpt",       "models/finetuned.ckpt", "history/pretrain.csv",
      "history/finetune.csv",   "traces/base.trc",       "traces/finetuned.trc",
      "circuit.json",           "rouge.csv",             "rouge.txt",
      "heatmaps/kl.pgm",        "heatmaps/entropy_pre.pgm", "heatmaps/entropy_post.pgm",
      "heatmaps/entropy_diff.pgm", "latent/pca3.csv",    "latent/pca3_variance.csv",
      "report.md"};
  for (const auto& f : report_files(config.model.n_layers)) files.push_back("analysis/" + f);
  if (!config.skip_lora) {
    files.insert(files.end(), {"adapters/lora_all.lora", "adapters/lora_targeted.lora",
                               "history/lora_all.csv", "history/lora_targeted.csv",
                               "traces/lora_all.trc"});
  }
  return files;
}

namespace {

void write_latents(const std::vector<std::pair<std::string, Eigen::MatrixXd>>& groups,
                   const std::vector<EncodedExample>& inputs, const fs::path& dir) {
  Eigen::Index rows = 0;
  for (const auto& g : groups) rows += g.second.rows();
  Eigen::MatrixXd all(rows, groups.front().second.cols());
  Eigen::Index at = 0;
  for (const auto& g : groups) {
    all.middleRows(at, g.second.rows()) = g.second;
    at += g.second.rows();
  }
  const Pca3 pca = pca3_project(all);
  CsvTable coords{{"model", "example", "pc1", "pc2", "pc3"}, {}};
  at = 0;
  for (const auto& g : groups) {
    for (Eigen::Index i = 0; i < g.second.rows(); ++i, ++at) {
      coords.rows.push_back({g.first, inputs[static_cast<std::size_t>(i)].id,
                             format_real(pca.coords(at, 0)), format_real(pca.coords(at, 1)),
                             format_real(pca.coords(at, 2))});
    }
  }
  write_csv(coords, dir / "pca3.csv");
  CsvTable var{{"component", "variance"}, {}};
  for (int c = 0; c < 3; ++c) var.rows.push_back({std::to_string(c + 1), format_real(pca.explained[c])});
  write_csv(var, dir / "pca3_variance.csv");
}

}  // namespace

PipelineOutcome run_pipeline(const PipelineConfig& config, const fs::path& out,
                             const StageLogger& log) {
  const auto start = std::chrono::steady_clock::now();
  PipelineOutcome outcome;
  RunManifest& manifest = outcome.manifest;
  manifest.command = "pipeline";
  manifest.config = config.to_json();
  manifest.seeds = {{"seed", config.seed},
                    {"corpus", config.corpus.seed},
                    {"model", config.model.seed},
                    {"pretrain", config.pretrain.seed},
                    {"finetune", config.finetune.seed},
                    {"lora", config.lora.seed}};
  manifest.inputs = config.corpus_path
                        ? nlohmann::json{{"corpus", config.corpus_path->string()}}
                        : nlohmann::json{{"synthetic", config.corpus.to_json()}};
  manifest.outputs = {{"directory", out.string()}};

  std::string stage = "setup";
  auto begin = [&](const std::string& name) {
    stage = name;
    if (log) log(name);
  };
  try {
    config.validate();
    for (const char* sub : {"corpus", "models", "history", "traces", "analysis", "heatmaps", "latent"}) {
      fs::create_directories(out / sub);
    }
    if (!config.skip_lora) fs::create_directories(out / "adapters");
    {
      std::ofstream cfg(out / "config.json");
      cfg << config.to_json().dump(2) << '\n';
    }

    begin("corpus");
    const PreparedData data = prepare_data(config);
    save_jsonl(data.splits.train, out / "corpus/train.jsonl");
    save_jsonl(data.splits.val, out / "corpus/val.jsonl");
    save_jsonl(data.splits.test, out / "corpus/test.jsonl");
    save_tokenizer(data.tokenizer, out / "vocab.json");

    begin("pretrain");
    StageResult base = pretrain_base(config, data);
    save_model(base.model, out / "models/base.ckpt", {{"stage", "pretrain"}});
    write_history_csv(base.history, out / "history/pretrain.csv");

    begin("finetune");
    StageResult tuned = finetune_model(base.model, config.finetune, data);
    save_model(tuned.model, out / "models/finetuned.ckpt", {{"stage", "finetune"}});
    write_history_csv(tuned.history, out / "history/finetune.csv");

    begin("trace");
    const auto inputs = trace_inputs(data, config.trace_examples);
    const TraceConfig tc = pipeline_trace_config();
    const TraceSet base_traces = trace_corpus(base.model, inputs, tc, "base");
    const TraceSet tuned_traces = trace_corpus(tuned.model, inputs, tc, "finetuned");
    save_traces(base_traces, out / "traces/base.trc");
    save_traces(tuned_traces, out / "traces/finetuned.trc");

    std::optional<LoraResult> lora_all;
    std::optional<TraceSet> lora_traces;
    if (!config.skip_lora) {
      begin("lora");
      lora_all = train_adapters(base.model, config.lora, config.lora_train, data);
      save_adapters(lora_all->adapted, out / "adapters/lora_all.lora");
      write_history_csv(lora_all->history, out / "history/lora_all.csv");
      lora_traces = trace_corpus(lora_all->adapted, inputs, tc, "lora");
      save_traces(*lora_traces, out / "traces/lora_all.trc");
    }

    begin("analyze");
    outcome.report = compute_diff_report(base_traces, tuned_traces, config.diff);
    if (lora_traces) {
      const auto extra = layer_kl_compare({{&tuned_traces, &*lora_traces, "finetuned_vs_lora"},
                                           {&base_traces, &*lora_traces, "base_vs_lora"}},
                                          config.diff.direction);
      outcome.report.layer_kl.insert(outcome.report.layer_kl.end(), extra.begin(), extra.end());
    }
    save_report(outcome.report, out / "analysis");

    begin("circuit");
    outcome.circuit = identify_circuit(outcome.report, config.circuit);
    save_circuit(outcome.circuit, out / "circuit.json");

    std::optional<LoraResult> lora_targeted;
    if (!config.skip_lora) {
      begin("lora_targeted");
      lora_targeted = train_adapters(base.model, to_lora_targets(outcome.circuit, config.lora),
                                     config.lora_train, data);
      save_adapters(lora_targeted->adapted, out / "adapters/lora_targeted.lora");
      write_history_csv(lora_targeted->history, out / "history/lora_targeted.csv");
    }

    begin("latent");
    {
      std::vector<std::pair<std::string, Eigen::MatrixXd>> groups;
      groups.emplace_back("base", pooled_latents(base.model, inputs));
      groups.emplace_back("finetuned", pooled_latents(tuned.model, inputs));
      if (lora_targeted) {
        const auto hook = lora_targeted->adapted.hook();
        groups.emplace_back("lora_targeted", pooled_latents(lora_targeted->adapted.base, inputs, &hook));
      }
      write_latents(groups, inputs, out / "latent");
    }

    begin("eval");
    Corpus eval_set(data.splits.test.begin(),
                    data.splits.test.begin() +
                        static_cast<std::ptrdiff_t>(std::min(config.eval_examples, data.splits.test.size())));
    const int max_len = config.model.max_seq_len;
    std::vector<LabeledGenerator> generators = {
        {"Base", greedy_generator(base.model, data.tokenizer, max_len)},
        {"Fine-tuned", greedy_generator(tuned.model, data.tokenizer, max_len)}};
    if (lora_all) generators.push_back({"LoRA", greedy_generator(lora_all->adapted, data.tokenizer, max_len)});
    if (lora_targeted) {
      generators.push_back({"LoRA-targeted", greedy_generator(lora_targeted->adapted, data.tokenizer, max_len)});
    }
    std::ostringstream warnings;
    outcome.rouge = evaluate_models(generators, eval_set, &warnings);
    if (log && !warnings.str().empty()) log(warnings.str());
    write_score_csv(outcome.rouge, out / "rouge.csv");
    {
      std::ofstream txt(out / "rouge.txt");
      txt << format_score_table(outcome.rouge);
    }

    begin("heatmaps");
    for (const char* name : {"kl", "entropy_pre", "entropy_post", "entropy_diff"}) {
      render_heatmap(out / "analysis" / (std::string(name) + ".csv"),
                     out / "heatmaps" / (std::string(name) + ".pgm"));
    }

    begin("report");
    write_report(out / "analysis", out / "report.md", out / "circuit.json", out / "rouge.csv");
  } catch (const std::exception& e) {
    manifest.status = "failed";
    manifest.failed_stage = stage;
    manifest.error = e.what();
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    try {
      manifest.save(out / "manifest.json");
    } catch (const std::exception&) {
      // The original failure is the one worth reporting.
    }
    throw;
  }
  manifest.outputs["artifacts"] = pipeline_artifacts(config);
  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  manifest.save(out / "manifest.json");
  return outcome;
}

}  // namespace circuit_lab
