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

// circuit-lab: command-line front end for training, tracing, and differential
// analysis of small decoder-only transformers.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "circuit_lab/circuit.hpp"
#include "circuit_lab/error.hpp"
#include "circuit_lab/instrumentation.hpp"
#include "circuit_lab/lora.hpp"
#include "circuit_lab/metrics.hpp"
#include "circuit_lab/pipeline.hpp"
#include "circuit_lab/report.hpp"
#include "circuit_lab/rouge.hpp"
#include "circuit_lab/trace.hpp"
#include "circuit_lab/training.hpp"

namespace fs = std::filesystem;
using namespace circuit_lab;

namespace {

using Clock = std::chrono::steady_clock;

// Shared by every subcommand.
struct Common {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  int index_base = 0;
};

PipelineConfig load_config(const Common& c) {
  PipelineConfig cfg = c.config ? PipelineConfig::load(*c.config) : PipelineConfig();
  if (c.seed) cfg.set_seed(*c.seed);
  return cfg;
}

std::vector<int> shift_layers(const std::vector<int>& given, int base) {
  std::vector<int> out;
  for (int l : given) out.push_back(l - base);
  return out;
}

void check_index_base(int base) {
  if (base != 0 && base != 1) throw ConfigError("--index-base must be 0 or 1");
}

// A directory output keeps manifest.json inside it; a file output gets a
// sibling <name>.manifest.json.
void finish(RunManifest& m, const fs::path& out, bool is_dir, Clock::time_point start) {
  m.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  m.outputs["path"] = out.string();
  m.save(is_dir ? out / "manifest.json" : fs::path(out.string() + ".manifest.json"));
}

struct Dataset {
  Tokenizer tokenizer;
  Corpus train, val, test;
};

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.tokenizer = load_tokenizer(dir / "vocab.json");
  d.train = load_jsonl(dir / "train.jsonl");
  d.val = load_jsonl(dir / "val.jsonl");
  d.test = load_jsonl(dir / "test.jsonl");
  return d;
}

const Corpus& pick_split(const Dataset& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  if (name == "test") return d.test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

Corpus first_n(const Corpus& c, std::size_t n) {
  return Corpus(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(std::min(n, c.size())));
}

PreparedData encode_dataset(const Dataset& d, int max_len) {
  PreparedData p;
  p.tokenizer = d.tokenizer;
  p.splits = {d.train, d.val, d.test};
  p.train = encode_corpus(d.tokenizer, d.train, max_len);
  p.val = encode_corpus(d.tokenizer, d.val, max_len);
  p.test = encode_corpus(d.tokenizer, d.test, max_len);
  for (const auto& ex : d.train) p.lm_train.push_back(encode_article(d.tokenizer, ex, max_len));
  for (const auto& ex : d.val) p.lm_val.push_back(encode_article(d.tokenizer, ex, max_len));
  return p;
}

void apply_overrides(TrainConfig& tc, std::optional<int> epochs, std::optional<double> lr,
                     std::optional<int> batch) {
  if (epochs) {
    tc.max_epochs = *epochs;
    tc.patience = std::min(tc.patience, *epochs);
  }
  if (lr) tc.learning_rate = *lr;
  if (batch) tc.batch_size = *batch;
  tc.validate();
}

void add_common(CLI::App* sub, Common& c, bool layers) {
  sub->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Seed for every random draw");
  if (layers) sub->add_option("--index-base", c.index_base, "Base of layer indices (0 or 1)");
}

void print_history(const TrainHistory& h) {
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    std::cout << "epoch " << e + 1 << "  train " << h.train_loss[e] << "  val " << h.val_loss[e]
              << '\n';
  }
  std::cout << "best epoch " << h.best_epoch << " (val " << h.best_val_loss << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train small transformers and measure how adaptation changes their internals"};
  app.require_subcommand(1);
  const auto start = Clock::now();
  std::function<void()> action;

  // gen-corpus
  Common gen_common;
  std::string gen_out;
  std::optional<std::size_t> gen_n;
  std::optional<int> gen_family;
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus and its splits");
  add_common(gen, gen_common, false);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--n-examples", gen_n, "Number of examples");
  gen->add_option("--template-family", gen_family, "Cue-phrase family");
  gen->callback([&] {
    action = [&] {
      PipelineConfig cfg = load_config(gen_common);
      if (gen_n) cfg.corpus.n_examples = *gen_n;
      if (gen_family) cfg.corpus.template_family = *gen_family;
      const PreparedData data = prepare_data(cfg);
      fs::create_directories(gen_out);
      save_jsonl(data.splits.train, fs::path(gen_out) / "train.jsonl");
      save_jsonl(data.splits.val, fs::path(gen_out) / "val.jsonl");
      save_jsonl(data.splits.test, fs::path(gen_out) / "test.jsonl");
      save_tokenizer(data.tokenizer, fs::path(gen_out) / "vocab.json");
      RunManifest m;
      m.command = "gen-corpus";
      m.config = cfg.to_json();
      m.seeds = {{"corpus", cfg.corpus.seed}, {"split", cfg.seed}};
      finish(m, gen_out, true, start);
      std::cout << data.splits.train.size() << " train, " << data.splits.val.size() << " val, "
                << data.splits.test.size() << " test examples; vocabulary "
                << data.tokenizer.size() << '\n';
    };
  });

  // train
  Common train_common;
  std::string train_data, train_out, train_objective = "lm";
  std::optional<std::string> train_history;
  std::optional<int> train_epochs, train_batch;
  std::optional<double> train_lr;
  auto* tr = app.add_subcommand("train", "Train a base model from scratch");
  add_common(tr, train_common, false);
  tr->add_option("--data", train_data, "Corpus directory from gen-corpus")->required();
  tr->add_option("--out", train_out, "Checkpoint path")->required();
  tr->add_option("--objective", train_objective, "lm (articles only) or task")
      ->check(CLI::IsMember({"lm", "task"}));
  tr->add_option("--epochs", train_epochs, "Maximum epochs");
  tr->add_option("--lr", train_lr, "Learning rate");
  tr->add_option("--batch-size", train_batch, "Examples per step");
  tr->add_option("--history", train_history, "Write per-epoch losses as CSV");
  tr->callback([&] {
    action = [&] {
      PipelineConfig cfg = load_config(train_common);
      apply_overrides(cfg.pretrain, train_epochs, train_lr, train_batch);
      const Dataset ds = load_dataset(train_data);
      const PreparedData data = encode_dataset(ds, cfg.model.max_seq_len);
      ModelConfig mc = cfg.model;
      mc.vocab_size = ds.tokenizer.size();
      Rng rng(mc.seed);
      auto model = GptModel<float>::init(mc, rng);
      const bool lm = train_objective == "lm";
      const TrainHistory h = train<float>(model, lm ? data.lm_train : data.train,
                                          lm ? data.lm_val : data.val, cfg.pretrain);
      save_model(model, train_out, {{"stage", "train"}, {"objective", train_objective}});
      if (train_history) write_history_csv(h, *train_history);
      print_history(h);
      RunManifest m;
      m.command = "train";
      m.config = {{"model", mc.to_json()}, {"train", cfg.pretrain.to_json()}, {"objective", train_objective}};
      m.seeds = {{"model", mc.seed}, {"train", cfg.pretrain.seed}};
      m.inputs = {{"data", train_data}};
      finish(m, train_out, false, start);
    };
  });

  // finetune
  Common ft_common;
  std::string ft_data, ft_base, ft_out;
  std::optional<std::string> ft_history;
  std::vector<int> ft_layers;
  std::optional<int> ft_epochs, ft_batch;
  std::optional<double> ft_lr;
  auto* ft = app.add_subcommand("finetune", "Fine-tune a copy of a model on the summary task");
  add_common(ft, ft_common, true);
  ft->add_option("--data", ft_data, "Corpus directory")->required();
  ft->add_option("--base", ft_base, "Base checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--out", ft_out, "Checkpoint path")->required();
  ft->add_option("--layers", ft_layers, "Only update these layers")->delimiter(',');
  ft->add_option("--epochs", ft_epochs, "Maximum epochs");
  ft->add_option("--lr", ft_lr, "Learning rate");
  ft->add_option("--batch-size", ft_batch, "Examples per step");
  ft->add_option("--history", ft_history, "Write per-epoch losses as CSV");
  ft->callback([&] {
    action = [&] {
      check_index_base(ft_common.index_base);
      PipelineConfig cfg = load_config(ft_common);
      apply_overrides(cfg.finetune, ft_epochs, ft_lr, ft_batch);
      const auto base = load_model<float>(ft_base);
      const PreparedData data = encode_dataset(load_dataset(ft_data), base.model.config.max_seq_len);
      std::optional<std::vector<int>> layers;
      if (!ft_layers.empty()) layers = shift_layers(ft_layers, ft_common.index_base);
      const StageResult r = finetune_model(base.model, cfg.finetune, data, layers);
      save_model(r.model, ft_out, {{"stage", "finetune"}});
      if (ft_history) write_history_csv(r.history, *ft_history);
      print_history(r.history);
      RunManifest m;
      m.command = "finetune";
      m.config = {{"train", cfg.finetune.to_json()}};
      if (layers) m.config["layers"] = *layers;
      m.seeds = {{"train", cfg.finetune.seed}};
      m.inputs = {{"data", ft_data}, {"base", ft_base}};
      finish(m, ft_out, false, start);
    };
  });

  // lora
  Common lora_common;
  std::string lora_data, lora_base, lora_out;
  std::optional<std::string> lora_circuit, lora_history;
  std::vector<int> lora_layers;
  std::vector<std::string> lora_projections;
  std::optional<int> lora_rank, lora_epochs, lora_batch;
  std::optional<double> lora_alpha, lora_lr;
  auto* lo = app.add_subcommand("lora", "Train low-rank adapters on a frozen model");
  add_common(lo, lora_common, true);
  lo->add_option("--data", lora_data, "Corpus directory")->required();
  lo->add_option("--base", lora_base, "Frozen base checkpoint")->required()->check(CLI::ExistingFile);
  lo->add_option("--out", lora_out, "Adapter file")->required();
  auto* lo_circ = lo->add_option("--circuit", lora_circuit, "Target the layers of this circuit.json")
                      ->check(CLI::ExistingFile);
  lo->add_option("--layers", lora_layers, "Target layers")->delimiter(',')->excludes(lo_circ);
  lo->add_option("--projections", lora_projections, "Subset of q,k,v,o")->delimiter(',');
  lo->add_option("--rank", lora_rank, "Adapter rank");
  lo->add_option("--alpha", lora_alpha, "Adapter scale numerator");
  lo->add_option("--epochs", lora_epochs, "Maximum epochs");
  lo->add_option("--lr", lora_lr, "Learning rate");
  lo->add_option("--batch-size", lora_batch, "Examples per step");
  lo->add_option("--history", lora_history, "Write per-epoch losses as CSV");
  lo->callback([&] {
    action = [&] {
      check_index_base(lora_common.index_base);
      PipelineConfig cfg = load_config(lora_common);
      LoraConfig lc = cfg.lora;
      if (lora_circuit) lc = to_lora_targets(load_circuit(*lora_circuit), lc);
      if (!lora_layers.empty()) lc.target_layers = shift_layers(lora_layers, lora_common.index_base);
      if (!lora_projections.empty()) {
        lc.projections.clear();
        for (const auto& p : lora_projections) lc.projections.push_back(parse_projection(p));
      }
      if (lora_rank) lc.rank = *lora_rank;
      if (lora_alpha) lc.alpha = *lora_alpha;
      if (lora_lr) lc.learning_rate = *lora_lr;
      if (lora_batch) lc.batch_size = *lora_batch;
      apply_overrides(cfg.lora_train, lora_epochs, std::nullopt, std::nullopt);
      const auto base = load_model<float>(lora_base);
      const PreparedData data = encode_dataset(load_dataset(lora_data), base.model.config.max_seq_len);
      const LoraResult r = train_adapters(base.model, lc, cfg.lora_train, data);
      save_adapters(r.adapted, lora_out);
      if (lora_history) write_history_csv(r.history, *lora_history);
      print_history(r.history);
      std::cout << "trainable parameters " << count_trainable(r.adapted) << " of "
                << base.model.count_params() << '\n';
      RunManifest m;
      m.command = "lora";
      m.config = {{"lora", lc.to_json()}, {"train", cfg.lora_train.to_json()}};
      m.seeds = {{"lora", lc.seed}};
      m.inputs = {{"data", lora_data}, {"base", lora_base}};
      finish(m, lora_out, false, start);
    };
  });

  // trace
  Common trace_common;
  std::string trace_data, trace_model, trace_out, trace_split = "test", trace_tag;
  std::optional<std::string> trace_adapters;
  std::size_t trace_limit = 64;
  bool trace_last_only = false, trace_residual = false;
  auto* tc = app.add_subcommand("trace", "Record attention and activations on a corpus split");
  add_common(tc, trace_common, false);
  tc->add_option("--data", trace_data, "Corpus directory")->required();
  tc->add_option("--model", trace_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  tc->add_option("--adapters", trace_adapters, "Adapter file to apply")->check(CLI::ExistingFile);
  tc->add_option("--out", trace_out, "Trace file")->required();
  tc->add_option("--split", trace_split, "train, val or test");
  tc->add_option("--limit", trace_limit, "Leading examples to trace");
  tc->add_option("--tag", trace_tag, "Model label stored in the trace");
  tc->add_flag("--last-only", trace_last_only, "Keep only the final query position");
  tc->add_flag("--residual", trace_residual, "Also capture the residual stream");
  tc->callback([&] {
    action = [&] {
      const auto loaded = load_model<float>(trace_model);
      const Dataset ds = load_dataset(trace_data);
      const auto inputs = encode_corpus(ds.tokenizer, first_n(pick_split(ds, trace_split), trace_limit),
                                        loaded.model.config.max_seq_len);
      TraceConfig cfg = pipeline_trace_config();
      cfg.capture_residual = trace_residual;
      if (trace_last_only) cfg.positions = TracePositions::kLastOnly;
      const std::string tag = trace_tag.empty() ? fs::path(trace_model).stem().string() : trace_tag;
      const TraceSet set = trace_adapters
                               ? trace_corpus(load_adapters(loaded.model, *trace_adapters), inputs, cfg, tag)
                               : trace_corpus(loaded.model, inputs, cfg, tag);
      save_traces(set, trace_out);
      RunManifest m;
      m.command = "trace";
      m.config = {{"split", trace_split}, {"limit", trace_limit}, {"last_only", trace_last_only},
                  {"residual", trace_residual}};
      m.inputs = {{"data", trace_data}, {"model", trace_model}};
      if (trace_adapters) m.inputs["adapters"] = *trace_adapters;
      finish(m, trace_out, false, start);
      std::cout << set.traces.size() << " traces written\n";
    };
  });

  // analyze
  Common an_common;
  std::string an_pre, an_post, an_out;
  std::optional<std::string> an_direction, an_source;
  std::vector<std::string> an_compare;
  std::optional<int> an_top_n;
  auto* an = app.add_subcommand("analyze", "Compare two trace files");
  add_common(an, an_common, false);
  an->add_option("--pre", an_pre, "Trace before adaptation")->required()->check(CLI::ExistingFile);
  an->add_option("--post", an_post, "Trace after adaptation")->required()->check(CLI::ExistingFile);
  an->add_option("--out", an_out, "Report directory")->required();
  an->add_option("--compare", an_compare, "Extra layer comparison as label=pre.trc:post.trc");
  an->add_option("--kl-direction", an_direction, "pre-post or post-pre")
      ->check(CLI::IsMember({"pre-post", "post-pre"}));
  an->add_option("--source", an_source, "Activation source: mlp or residual");
  an->add_option("--top-n", an_top_n, "Neurons kept per layer");
  an->callback([&] {
    action = [&] {
      DiffOptions opt = load_config(an_common).diff;
      if (an_direction) {
        opt.direction = *an_direction == "pre-post" ? KlDirection::kPreToPost : KlDirection::kPostToPre;
      }
      if (an_source) opt.source = parse_activation_source(*an_source);
      if (an_top_n) opt.top_n = *an_top_n;
      const TraceSet pre = load_traces(an_pre);
      const TraceSet post = load_traces(an_post);
      DiffReport report = compute_diff_report(pre, post, opt);
      std::vector<TraceSet> extra_sets;
      extra_sets.reserve(2 * an_compare.size());
      std::vector<TracePair> pairs;
      for (const auto& spec : an_compare) {
        const auto eq = spec.find('=');
        const auto colon = spec.find(':', eq == std::string::npos ? 0 : eq);
        if (eq == std::string::npos || colon == std::string::npos) {
          throw ConfigError("--compare expects label=pre.trc:post.trc, got '" + spec + "'");
        }
        extra_sets.push_back(load_traces(spec.substr(eq + 1, colon - eq - 1)));
        extra_sets.push_back(load_traces(spec.substr(colon + 1)));
        pairs.push_back({&extra_sets[extra_sets.size() - 2], &extra_sets.back(), spec.substr(0, eq)});
      }
      for (const auto& p : pairs) pre.check_comparable(*p.pre);
      const auto extra = layer_kl_compare(pairs, opt.direction);
      report.layer_kl.insert(report.layer_kl.end(), extra.begin(), extra.end());
      save_report(report, an_out);
      RunManifest m;
      m.command = "analyze";
      m.config = {{"kl_direction", opt.direction == KlDirection::kPreToPost ? "pre||post" : "post||pre"},
                  {"source", activation_source_name(opt.source)},
                  {"top_n", opt.top_n}};
      m.inputs = {{"pre", an_pre}, {"post", an_post}, {"compare", an_compare}};
      finish(m, an_out, true, start);
      std::cout << "fraction of heads with decreased entropy: " << report.fraction_decreased_entropy
                << '\n';
    };
  });

  // circuit
  Common circ_common;
  std::string circ_report, circ_out;
  std::optional<std::string> circ_score;
  std::optional<int> circ_k, circ_top;
  std::optional<double> circ_quantile;
  auto* ci = app.add_subcommand("circuit", "Select the layers that changed most");
  add_common(ci, circ_common, true);
  ci->add_option("--report", circ_report, "Report directory from analyze")->required();
  ci->add_option("--out", circ_out, "circuit.json path")->required();
  ci->add_option("--k", circ_k, "Number of layers");
  ci->add_option("--head-quantile", circ_quantile, "KL quantile for listed heads");
  ci->add_option("--score", circ_score, "kl or combined");
  ci->add_option("--top-neurons", circ_top, "Neurons kept per circuit layer");
  ci->callback([&] {
    action = [&] {
      check_index_base(circ_common.index_base);
      CircuitOptions circ_opt = load_config(circ_common).circuit;
      if (circ_k) circ_opt.k = *circ_k;
      if (circ_quantile) circ_opt.head_quantile = *circ_quantile;
      if (circ_top) circ_opt.top_neurons = *circ_top;
      if (circ_score) circ_opt.score = parse_circuit_score(*circ_score);
      const CircuitSpec spec = identify_circuit(load_report(circ_report), circ_opt);
      save_circuit(spec, circ_out);
      std::cout << "circuit layers:";
      for (const auto& l : spec.layers) std::cout << ' ' << l.layer + circ_common.index_base;
      std::cout << '\n';
      RunManifest m;
      m.command = "circuit";
      m.config = {{"k", circ_opt.k},
                  {"head_quantile", circ_opt.head_quantile},
                  {"score", circuit_score_name(circ_opt.score)},
                  {"top_neurons", circ_opt.top_neurons}};
      m.inputs = {{"report", circ_report}};
      finish(m, circ_out, false, start);
    };
  });

  // eval
  Common ev_common;
  std::string ev_data, ev_out, ev_split = "test";
  std::vector<std::string> ev_models;
  std::optional<std::string> ev_table;
  std::size_t ev_limit = 100;
  auto* ev = app.add_subcommand("eval", "Score greedy summaries with ROUGE");
  add_common(ev, ev_common, false);
  ev->add_option("--data", ev_data, "Corpus directory")->required();
  ev->add_option("--model", ev_models, "label=checkpoint[:adapters], repeatable")->required();
  ev->add_option("--out", ev_out, "Score CSV")->required();
  ev->add_option("--split", ev_split, "train, val or test");
  ev->add_option("--limit", ev_limit, "Leading examples to score");
  ev->add_option("--table", ev_table, "Also write an aligned text table");
  ev->callback([&] {
    action = [&] {
      const Dataset ds = load_dataset(ev_data);
      const Corpus test = first_n(pick_split(ds, ev_split), ev_limit);
      std::vector<LoadedModel<float>> models;
      std::vector<AdaptedModel<float>> adapted;
      models.reserve(ev_models.size());
      adapted.reserve(ev_models.size());
      std::vector<LabeledGenerator> gens;
      for (const auto& spec : ev_models) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw ConfigError("--model expects label=checkpoint, got '" + spec + "'");
        const std::string rest = spec.substr(eq + 1);
        const auto colon = rest.find(':');
        models.push_back(load_model<float>(rest.substr(0, colon)));
        const int max_len = models.back().model.config.max_seq_len;
        if (colon == std::string::npos) {
          gens.push_back({spec.substr(0, eq), greedy_generator(models.back().model, ds.tokenizer, max_len)});
        } else {
          adapted.push_back(load_adapters(models.back().model, rest.substr(colon + 1)));
          gens.push_back({spec.substr(0, eq), greedy_generator(adapted.back(), ds.tokenizer, max_len)});
        }
      }
      const ScoreTable table = evaluate_models(gens, test, &std::cerr);
      write_score_csv(table, ev_out);
      if (ev_table) {
        std::ofstream(*ev_table) << format_score_table(table);
      }
      std::cout << format_score_table(table);
      RunManifest m;
      m.command = "eval";
      m.config = {{"split", ev_split}, {"limit", ev_limit}};
      m.inputs = {{"data", ev_data}, {"models", ev_models}};
      finish(m, ev_out, false, start);
    };
  });

  // report
  Common rep_common;
  std::string rep_dir, rep_out, rep_format = "pgm";
  std::optional<std::string> rep_circuit, rep_rouge, rep_heatmaps;
  auto* rep = app.add_subcommand("report", "Write a markdown summary and heatmaps");
  add_common(rep, rep_common, true);
  rep->add_option("--report", rep_dir, "Report directory from analyze")->required();
  rep->add_option("--out", rep_out, "Markdown path")->required();
  rep->add_option("--circuit", rep_circuit, "circuit.json to include");
  rep->add_option("--rouge", rep_rouge, "Score CSV to include");
  rep->add_option("--heatmaps", rep_heatmaps, "Directory for head-matrix heatmaps");
  rep->add_option("--format", rep_format, "Heatmap format: pgm or csv");
  rep->callback([&] {
    action = [&] {
      check_index_base(rep_common.index_base);
      const HeatmapFormat fmt = parse_heatmap_format(rep_format);
      std::optional<fs::path> circuit, rouge;
      if (rep_circuit) circuit = *rep_circuit;
      if (rep_rouge) rouge = *rep_rouge;
      write_report(rep_dir, rep_out, circuit, rouge, rep_common.index_base);
      if (rep_heatmaps) {
        fs::create_directories(*rep_heatmaps);
        for (const char* name : {"kl", "entropy_pre", "entropy_post", "entropy_diff"}) {
          render_heatmap(fs::path(rep_dir) / (std::string(name) + ".csv"),
                         fs::path(*rep_heatmaps) / (std::string(name) + "." + rep_format), fmt);
        }
      }
      RunManifest m;
      m.command = "report";
      m.inputs = {{"report", rep_dir}};
      finish(m, rep_out, false, start);
    };
  });

  // pipeline
  Common pipe_common;
  std::string pipe_out;
  bool pipe_skip_lora = false, pipe_quiet = false;
  auto* pipe = app.add_subcommand("pipeline", "Run every stage end to end");
  add_common(pipe, pipe_common, false);
  pipe->add_option("--out", pipe_out, "Run directory")->required();
  pipe->add_flag("--skip-lora", pipe_skip_lora, "Leave out adapter training");
  pipe->add_flag("--quiet", pipe_quiet, "Do not print stage names");
  pipe->callback([&] {
    action = [&] {
      PipelineConfig cfg = load_config(pipe_common);
      if (pipe_skip_lora) cfg.skip_lora = true;
      const auto t0 = Clock::now();
      auto log = [&](const std::string& msg) {
        if (pipe_quiet) return;
        const double s = std::chrono::duration<double>(Clock::now() - t0).count();
        std::cerr << "[" << static_cast<int>(s) << "s] " << msg << '\n';
      };
      const PipelineOutcome r = run_pipeline(cfg, pipe_out, log);
      std::cout << format_score_table(r.rouge);
      std::cout << "fraction of heads with decreased entropy: "
                << r.report.fraction_decreased_entropy << '\n';
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    action();
  } catch (const Error& e) {
    std::cerr << "circuit-lab: " << kind_name(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "circuit-lab: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
