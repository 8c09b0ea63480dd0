// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string output;  // stdout and stderr
};

Outcome run(const std::string& args, const fs::path& cwd, const std::string& env = "") {
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + " '" SIMCR_CLI "' " + args +
                          " 2>&1";
  Outcome o;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) o.output += buf.data();
  const int status = pclose(pipe);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

constexpr const char* kSpec = R"(task:
  src_vocab_size: 6
  tgt_vocab_size: 6
  min_len: 2
  max_len: 5
  frame_dim: 4
  min_repeat: 2
  max_repeat: 3
sizes:
  train: 40
  valid: 10
  test: 10
  external: 40
)";

constexpr const char* kPipeline = R"(name: tiny
seed: 4
model:
  d_model: 8
  n_heads: 2
  n_enc_layers: 1
  n_dec_layers: 1
  d_ffn: 16
  vocab_size: 17
  frame_dim: 4
  conv_channels: 8
  max_positions: 64
stages:
  - name: pre
    tasks: [mt]
    corpus: {mt: external}
    max_steps: 6
    warmup_steps: 2
    eval_every: 3
    text_budget: 60
  - name: st
    tasks: [st]
    init: pre
    alpha: 1.0
    max_steps: 6
    warmup_steps: 2
    eval_every: 3
    speech_budget: 120
)";

// Working area shared by the cases below; built once.
struct Workspace {
  fs::path root = simcr::testing::scratch_dir("cli");
  Workspace() {
    write_file(root / "spec.yaml", kSpec);
    write_file(root / "tiny.yaml", kPipeline);
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("cli: usage and exit codes") {
  CHECK(run("--help", ws().root).code == 0);
  CHECK(run("", ws().root).code == 1);
  CHECK(run("gen-data", ws().root).code == 1);
  CHECK(run("train --pipeline simregcr --bogus", ws().root).code == 1);
  const Outcome v = run("--version", ws().root);
  CHECK(v.code == 0);
  CHECK(v.output.find("1.0.0") != std::string::npos);
}

TEST_CASE("cli: gen-data") {
  const fs::path& root = ws().root;
  const Outcome first = run("gen-data --spec spec.yaml --out data --force", root);
  REQUIRE(first.code == 0);
  for (const char* f : {"corpus.simcr", "spec.yaml", "manifest.json"}) CHECK(fs::exists(root / "data" / f));
  const json m = read_json(root / "data/manifest.json");
  CHECK(m["corpus"]["counts"]["train"] == 40);
  CHECK(m["tool"] == "simcr");
  CHECK(m["seeds"]["corpus"] == 1);
  CHECK(m.contains("config_hash"));
  CHECK(m.contains("timestamps"));

  SUBCASE("an existing directory needs --force") {
    CHECK(run("gen-data --spec spec.yaml --out data", root).code == 1);
    CHECK(run("gen-data --spec spec.yaml --out data --force", root).code == 0);
    CHECK(read_json(root / "data/manifest.json")["corpus"]["hash"] == m["corpus"]["hash"]);
  }
  SUBCASE("seed precedence") {
    REQUIRE(run("gen-data --spec spec.yaml --out seeded --seed 9", root).code == 0);
    const json s = read_json(root / "seeded/manifest.json");
    CHECK(s["seeds"]["corpus"] == 9);
    CHECK(s["corpus"]["hash"] != m["corpus"]["hash"]);
    REQUIRE(run("gen-data --spec spec.yaml --out env", root, "SIMCR_SEED=9").code == 0);
    CHECK(read_json(root / "env/manifest.json")["corpus"]["hash"] == s["corpus"]["hash"]);
    write_file(root / "spec_seed.yaml", std::string(kSpec) + "filter:\n  max_frames: 200\n");
    std::string with_seed = kSpec;
    with_seed.replace(with_seed.find("task:\n"), 6, "task:\n  seed: 5\n");
    write_file(root / "spec_seed.yaml", with_seed);
    REQUIRE(run("gen-data --spec spec_seed.yaml --out fileseed", root, "SIMCR_SEED=9").code == 0);
    CHECK(read_json(root / "fileseed/manifest.json")["seeds"]["corpus"] == 5);
  }
  SUBCASE("an invalid spec is a usage error") {
    write_file(root / "bad.yaml", "task:\n  src_vocab: 3\n");
    const Outcome o = run("gen-data --spec bad.yaml --out bad", root);
    CHECK(o.code == 1);
    CHECK(o.output.find("src_vocab") != std::string::npos);
  }
}

TEST_CASE("cli: default spec sizes") {
  REQUIRE(run("gen-data --out default --force", ws().root).code == 0);
  const json m = read_json(ws().root / "default/manifest.json");
  CHECK(m["corpus"]["counts"]["train"] == 8000);
  CHECK(m["corpus"]["counts"]["valid"] == 500);
  CHECK(m["corpus"]["counts"]["test"] == 500);
}

TEST_CASE("cli: train, evaluate, report") {
  const fs::path& root = ws().root;
  if (!fs::exists(root / "data/manifest.json")) {
    REQUIRE(run("gen-data --spec spec.yaml --out data", root).code == 0);
  }

  SUBCASE("dry run prints the resolved stages") {
    const Outcome zero = run("train --pipeline simzerocr --dry-run", root);
    CHECK(zero.code == 0);
    CHECK(zero.output.find("mt-pretrain") != std::string::npos);
    CHECK(zero.output.find("mt-finetune") != std::string::npos);
    CHECK(zero.output.find("asr-mt-finetune") != std::string::npos);
    const Outcome base = run("train --pipeline baseline-zero --dry-run", root);
    CHECK(base.code == 0);
    CHECK(base.output.find("asr-mt-finetune") != std::string::npos);
    CHECK(run("train --pipeline nonexistent --dry-run", root).code == 1);
  }

  SUBCASE("a dangling stage reference fails before training") {
    std::string bad = kPipeline;
    bad.replace(bad.find("init: pre"), 9, "init: gone");
    write_file(root / "dangling.yaml", bad);
    const Outcome o = run("train --pipeline dangling.yaml --data data --out dangling", root);
    CHECK(o.code == 1);
    CHECK_FALSE(fs::exists(root / "dangling/pre.log.csv"));
  }

  REQUIRE(run("train --pipeline tiny.yaml --data data --out run1 --quiet --force", root).code == 0);
  for (const char* f : {"final.ckpt", "summary.json", "manifest.json", "pipeline.yaml",
                        "pre.best.ckpt", "pre.log.csv", "st.best.ckpt", "st.log.csv"}) {
    CHECK(fs::exists(root / "run1" / f));
  }
  const json summary = read_json(root / "run1/summary.json");
  CHECK(summary["stages"].size() == 2);
  CHECK(summary["stages"][1].contains("last_loss"));

  SUBCASE("identical configuration gives identical parameters") {
    REQUIRE(run("train --pipeline tiny.yaml --data data --out run2 --quiet --force", root).code == 0);
    CHECK(read_json(root / "run2/summary.json")["params_hash"] == summary["params_hash"]);
    CHECK(run("train --pipeline tiny.yaml --data data --out run2 --quiet", root).code == 1);
  }

  SUBCASE("evaluation") {
    REQUIRE(run("evaluate --checkpoint run1/final.ckpt --data data --out ev_beam1 --beam 1 --force", root)
                .code == 0);
    REQUIRE(run("evaluate --checkpoint run1/final.ckpt --data data --out ev_greedy --greedy --force", root)
                .code == 0);
    const json b = read_json(root / "ev_beam1/report.json");
    const json g = read_json(root / "ev_greedy/report.json");
    CHECK(b["bleu"] == g["bleu"]);
    CHECK(b["samples"] == g["samples"]);
    CHECK(b.contains("src_vocab_rate"));
    CHECK(b["task"] == "st");
    CHECK(fs::exists(root / "ev_beam1/report.txt"));
    CHECK(fs::exists(root / "ev_beam1/manifest.json"));

    const Outcome bad_tag =
        run("evaluate --checkpoint run1/final.ckpt --data data --out ev_bad --tag de", root);
    CHECK(bad_tag.code == 1);
    CHECK(bad_tag.output.find("<src>") != std::string::npos);
    CHECK(bad_tag.output.find("<tgt>") != std::string::npos);

    REQUIRE(run("simsearch --checkpoint run1/final.ckpt --data data --out ev_sim --force", root).code == 0);
    CHECK(read_json(root / "ev_sim/report.json").contains("simsearch"));
    CHECK(fs::exists(root / "ev_sim/representations.csv"));

    CHECK(run("evaluate --checkpoint missing.ckpt --data data --out ev_missing", root).code == 1);
    write_file(root / "junk.ckpt", "not a checkpoint");
    CHECK(run("evaluate --checkpoint junk.ckpt --data data --out ev_junk", root).code == 2);

    SUBCASE("report") {
      const Outcome rep = run("report ev_sim ev_beam1 ev_sim nothing_here --out cmp --force", root);
      REQUIRE(rep.code == 0);
      const std::string csv = read_file(root / "cmp/comparison.csv");
      std::vector<std::string> lines;
      std::istringstream in(csv);
      for (std::string l; std::getline(in, l);) lines.push_back(l);
      REQUIRE(lines.size() == 5);
      CHECK(lines[1] == lines[3]);
      CHECK(lines[4].find("absent") != std::string::npos);
      CHECK(lines[1].find("tiny") != std::string::npos);
      const std::string svg = read_file(root / "cmp/scatter.svg");
      std::size_t points = 0;
      for (std::size_t p = 0; (p = svg.find("class=\"point\"", p)) != std::string::npos; ++p) ++points;
      CHECK(points == 2);
      CHECK(fs::exists(root / "cmp/comparison.txt"));
      CHECK(fs::exists(root / "cmp/manifest.json"));
    }
  }
}
