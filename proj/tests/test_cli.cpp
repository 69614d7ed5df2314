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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "test_support.hpp"

using circuit_lab::testing::TempDir;

namespace {

int run(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(CIRCUIT_LAB_CLI) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// One-epoch, two-layer configuration shared by every command below.
void write_config(const std::filesystem::path& path) {
  const nlohmann::json j = {
      {"seed", 4},
      {"corpus", {{"n_examples", 50}, {"sentences_per_article", 4}, {"salient_per_article", 1},
                  {"vocab_word_count", 40}}},
      {"model", {{"n_layers", 2}, {"n_heads", 2}, {"d_model", 16}, {"d_mlp", 32},
                 {"max_seq_len", 64}}},
      {"pretrain", {{"max_epochs", 1}, {"patience", 1}, {"batch_size", 8}}},
      {"finetune", {{"max_epochs", 1}, {"patience", 1}, {"batch_size", 8}}},
      {"lora_train", {{"max_epochs", 1}, {"patience", 1}, {"batch_size", 8}}},
      {"lora", {{"rank", 2}}},
      {"circuit", {{"k", 1}}}};
  std::ofstream(path) << j.dump(2);
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    write_config(*dir_ / "cfg.json");
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  std::filesystem::path p(const std::string& name) const { return *dir_ / name; }
  int cli(const std::string& args) const {
    return run(args + " --config " + p("cfg.json").string(), p("log.txt"));
  }
  int bare(const std::string& args) const { return run(args, p("log.txt")); }

  static TempDir* dir_;
};

TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(bare(""), 2);
  EXPECT_EQ(bare("bogus"), 2);
  EXPECT_EQ(bare("gen-corpus"), 2);
  EXPECT_EQ(bare("--help"), 0);
  std::ofstream(p("broken.json")) << "{ nope";
  EXPECT_EQ(bare("gen-corpus --out " + p("x").string() + " --config " + p("broken.json").string()), 2);
  EXPECT_EQ(bare("gen-corpus --out " + p("x").string() + " --config " + p("missing.json").string()), 2);
}

TEST_F(Cli, EndToEndCommands) {
  const auto data = p("data").string();
  ASSERT_EQ(cli("gen-corpus --out " + data), 0) << slurp(p("log.txt"));
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "vocab.json", "manifest.json"}) {
    EXPECT_TRUE(std::filesystem::exists(p("data") / f)) << f;
  }
  ASSERT_EQ(cli("train --data " + data + " --out " + p("base.ckpt").string() + " --history " +
                p("h.csv").string()),
            0)
      << slurp(p("log.txt"));
  EXPECT_TRUE(std::filesystem::exists(p("base.ckpt.manifest.json")));
  ASSERT_EQ(cli("finetune --data " + data + " --base " + p("base.ckpt").string() + " --out " +
                p("ft.ckpt").string() + " --layers 2 --index-base 1"),
            0)
      << slurp(p("log.txt"));
  ASSERT_EQ(cli("trace --data " + data + " --model " + p("base.ckpt").string() + " --out " +
                p("base.trc").string() + " --limit 4 --tag base"),
            0);
  ASSERT_EQ(cli("trace --data " + data + " --model " + p("ft.ckpt").string() + " --out " +
                p("ft.trc").string() + " --limit 4 --tag finetuned"),
            0);
  ASSERT_EQ(cli("analyze --pre " + p("base.trc").string() + " --post " + p("ft.trc").string() +
                " --out " + p("analysis").string()),
            0)
      << slurp(p("log.txt"));
  EXPECT_TRUE(std::filesystem::exists(p("analysis") / "kl.csv"));
  ASSERT_EQ(cli("circuit --report " + p("analysis").string() + " --out " + p("circuit.json").string()),
            0);
  const auto circuit = nlohmann::json::parse(slurp(p("circuit.json")));
  // Only layer 1 (0-based) was fine-tuned; layer 0 is untouched.
  EXPECT_EQ(circuit["layers"][0]["layer"], 1);
  ASSERT_EQ(cli("lora --data " + data + " --base " + p("base.ckpt").string() + " --out " +
                p("a.lora").string() + " --circuit " + p("circuit.json").string()),
            0)
      << slurp(p("log.txt"));
  ASSERT_EQ(cli("eval --data " + data + " --limit 3 --out " + p("rouge.csv").string() +
                " --model base=" + p("base.ckpt").string() + " --model lora=" +
                p("base.ckpt").string() + ":" + p("a.lora").string()),
            0)
      << slurp(p("log.txt"));
  ASSERT_EQ(cli("report --report " + p("analysis").string() + " --out " + p("r.md").string() +
                " --circuit " + p("circuit.json").string() + " --rouge " + p("rouge.csv").string() +
                " --heatmaps " + p("heat").string()),
            0)
      << slurp(p("log.txt"));
  EXPECT_NE(slurp(p("r.md")).find("Fraction decreased entropy"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(p("heat") / "kl.pgm"));

  // Failure exit codes against the artifacts above.
  std::ofstream(p("junk.ckpt")) << "garbage";
  EXPECT_EQ(cli("trace --data " + data + " --model " + p("junk.ckpt").string() + " --out " +
                p("junk.trc").string()),
            3);
  ASSERT_EQ(cli("trace --data " + data + " --model " + p("ft.ckpt").string() + " --out " +
                p("short.trc").string() + " --limit 3"),
            0);
  EXPECT_EQ(cli("analyze --pre " + p("base.trc").string() + " --post " + p("short.trc").string() +
                " --out " + p("bad").string()),
            5);
  std::filesystem::create_directories(p("empty"));
  EXPECT_EQ(cli("report --report " + p("empty").string() + " --out " + p("e.md").string()), 3);
  EXPECT_EQ(cli("finetune --data " + data + " --base " + p("base.ckpt").string() + " --out " +
                p("x.ckpt").string() + " --layers 7"),
            2);
}
