// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include <fstream>
#include <sstream>

#include "doctest.h"
#include "simcr/pipeline.hpp"
#include "support.hpp"

using namespace simcr;
using simcr::testing::same_params;
using simcr::testing::scratch_dir;
using simcr::testing::tiny_model_config;
using simcr::testing::tiny_stage;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

const Corpus& corpus() {
  static const Corpus c = simcr::testing::tiny_corpus();
  return c;
}

PipelineConfig two_stage(std::uint64_t seed = 1) {
  PipelineConfig p;
  p.name = "two-stage";
  p.seed = seed;
  p.model = tiny_model_config();
  p.stages.push_back(tiny_stage("pre", {Task::MT}, 8));
  p.stages.back().corpus[Task::MT] = "external";
  p.stages.push_back(tiny_stage("st", {Task::ST}, 8, "pre"));
  p.stages.back().loss.alpha = 1.0;
  return p;
}

}  // namespace

TEST_CASE("best checkpoint selection") {
  CHECK(select_best({{1, 3.0}, {2, 2.5}, {3, 1.0}}) == 2);
  CHECK(select_best({{1, 3.0}, {2, 2.0}, {3, 2.0}}) == 1);
  CHECK(select_best({{5, 4.0}}) == 0);
  CHECK_THROWS(select_best({}));
}

TEST_CASE("stage configuration checks") {
  StageConfig s = tiny_stage("ok", {Task::ST}, 4);
  CHECK_NOTHROW(s.validate());
  SUBCASE("no tasks") {
    s.tasks.clear();
    CHECK_THROWS(s.validate());
  }
  SUBCASE("beta without a matching task") {
    s.tasks = {Task::MT};
    s.loss.beta = 1.0;
    s.loss.cross = CrossKind::Asr;
    CHECK_THROWS(s.validate());
  }
  SUBCASE("negative weights") {
    s.loss.alpha = -1.0;
    CHECK_THROWS(s.validate());
  }
}

TEST_CASE("pipeline references are checked before training") {
  PipelineConfig p = two_stage();
  CHECK_NOTHROW(p.validate());
  SUBCASE("dangling") {
    p.stages[1].init = "missing";
    CHECK_THROWS(p.validate());
    CHECK_THROWS(run_pipeline(p, corpus()));
  }
  SUBCASE("forward") {
    p.stages[0].init = "st";
    CHECK_THROWS(p.validate());
  }
  SUBCASE("duplicate names") {
    p.stages[1].name = "pre";
    p.stages[1].init = "scratch";
    CHECK_THROWS(p.validate());
  }
}

TEST_CASE("checkpoint files") {
  const auto dir = scratch_dir("ckpt");
  const StageResult r = run_stage(tiny_stage("s", {Task::MT}, 6), corpus(), tiny_model_config(),
                                  nullptr, 5);
  const Checkpoint& c = r.best;
  save_checkpoint(c, dir / "a.ckpt");

  SUBCASE("round trip is bitwise") {
    const Checkpoint back = load_checkpoint(dir / "a.ckpt");
    CHECK(same_params(back.params, c.params));
    CHECK(back.optim.step_count == c.optim.step_count);
    CHECK(back.optim.first_moment == c.optim.first_moment);
    CHECK(back.optim.second_moment == c.optim.second_moment);
    CHECK(back.stage == "s");
    CHECK(back.step == c.step);
    CHECK(back.history == c.history);
    CHECK(params_hash(back.params) == params_hash(c.params));
    const StageConfig s = tiny_stage("s", {Task::MT}, 6);
    CHECK(validation_loss(Seq2Seq(back.config, back.params.clone()), s, corpus().valid) ==
          validation_loss(Seq2Seq(c.config, c.params.clone()), s, corpus().valid));
  }
  SUBCASE("corruption is detected") {
    std::string bytes = read_file(dir / "a.ckpt");
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    write_file(dir / "flip.ckpt", flipped);
    CHECK_THROWS_AS(load_checkpoint(dir / "flip.ckpt"), CheckpointError);
    write_file(dir / "cut.ckpt", bytes.substr(0, bytes.size() - 9));
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), CheckpointError);
    write_file(dir / "magic.ckpt", "NOTACKPT" + bytes.substr(8));
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), CheckpointError);
  }
  SUBCASE("architecture mismatch needs an override") {
    ModelConfig other = tiny_model_config();
    other.d_ffn = 32;
    CHECK_THROWS_AS(load_checkpoint_for(dir / "a.ckpt", other, false), CheckpointError);
    CHECK_NOTHROW(load_checkpoint_for(dir / "a.ckpt", other, true));
    CHECK_NOTHROW(load_checkpoint_for(dir / "a.ckpt", tiny_model_config(), false));
  }
}

TEST_CASE("zero-step stage returns its init unchanged") {
  const StageResult first = run_stage(tiny_stage("a", {Task::MT}, 4), corpus(),
                                      tiny_model_config(), nullptr, 3);
  const StageResult idle = run_stage(tiny_stage("b", {Task::ST}, 0, "a"), corpus(),
                                     tiny_model_config(), &first.best, 4);
  CHECK(same_params(idle.best.params, first.best.params));
  CHECK(idle.steps_run == 0);
}

TEST_CASE("init with another architecture is rejected") {
  const StageResult first = run_stage(tiny_stage("a", {Task::MT}, 2), corpus(),
                                      tiny_model_config(), nullptr, 3);
  ModelConfig bigger = tiny_model_config();
  bigger.d_model = 12;
  CHECK_THROWS(run_stage(tiny_stage("b", {Task::MT}, 2, "a"), corpus(), bigger, &first.best, 4));
}

TEST_CASE("training is deterministic and selects the best evaluation") {
  const StageConfig s = tiny_stage("s", {Task::ST, Task::MT}, 12);
  const StageResult a = run_stage(s, corpus(), tiny_model_config(), nullptr, 9);
  const StageResult b = run_stage(s, corpus(), tiny_model_config(), nullptr, 9);
  CHECK(same_params(a.best.params, b.best.params));
  CHECK(a.history == b.history);
  REQUIRE(a.history.size() == 3);
  CHECK(a.best.step == a.history[select_best(a.history)].step);
  CHECK(a.history.back().val_loss < a.history.front().val_loss + 1.0);
  const StageResult c = run_stage(s, corpus(), tiny_model_config(), nullptr, 10);
  CHECK_FALSE(same_params(a.best.params, c.best.params));
}

TEST_CASE("resuming reproduces the uninterrupted run") {
  const StageConfig s = tiny_stage("s", {Task::ST}, 10);
  const auto full_dir = scratch_dir("resume-full");
  const auto cut_dir = scratch_dir("resume-cut");
  RunOptions full_opt;
  full_opt.out_dir = full_dir;
  const StageResult full = run_stage(s, corpus(), tiny_model_config(), nullptr, 12, full_opt);

  RunOptions cut_opt;
  cut_opt.out_dir = cut_dir;
  cut_opt.stop_after = 6;
  CHECK_THROWS_AS(run_stage(s, corpus(), tiny_model_config(), nullptr, 12, cut_opt),
                  StageInterrupted);
  cut_opt.stop_after.reset();
  cut_opt.resume = true;
  const StageResult resumed = run_stage(s, corpus(), tiny_model_config(), nullptr, 12, cut_opt);

  CHECK(same_params(resumed.best.params, full.best.params));
  CHECK(resumed.history == full.history);
  CHECK(read_file(cut_dir / "s.log.csv") == read_file(full_dir / "s.log.csv"));
  CHECK(same_params(load_checkpoint(cut_dir / "s.last.ckpt").params,
                    load_checkpoint(full_dir / "s.last.ckpt").params));
}

TEST_CASE("training log") {
  const auto dir = scratch_dir("log");
  RunOptions opt;
  opt.out_dir = dir;
  (void)run_stage(tiny_stage("s", {Task::MT}, 5), corpus(), tiny_model_config(), nullptr, 1, opt);
  std::ifstream in(dir / "s.log.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,lr,ce,intra,cross,total,val_loss");
  std::size_t rows = 0, with_val = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (line.back() != ',') ++with_val;
  }
  CHECK(rows == 5);
  CHECK(with_val == 2);
}

TEST_CASE("a diverging stage aborts and keeps the last good checkpoint") {
  StageConfig s = tiny_stage("boom", {Task::MT}, 40);
  s.peak_lr = 1e150;
  s.warmup_steps = 1;
  s.eval_every = 1;
  const StageResult r = run_stage(s, corpus(), tiny_model_config(), nullptr, 2);
  REQUIRE(r.aborted.has_value());
  CHECK(r.steps_run < 40);
  for (const auto& t : r.best.params.tensors()) {
    for (double v : t.data()) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("pipelines") {
  const PipelineConfig p = two_stage();
  const PipelineResult a = run_pipeline(p, corpus());
  REQUIRE(a.stages.size() == 2);

  SUBCASE("identical configuration, identical parameters") {
    const PipelineResult b = run_pipeline(p, corpus());
    CHECK(params_hash(a.final_checkpoint().params) == params_hash(b.final_checkpoint().params));
  }
  SUBCASE("editing a later stage leaves earlier stages alone") {
    PipelineConfig q = p;
    q.stages[1].loss.alpha = 2.0;
    q.stages[1].max_steps = 4;
    const PipelineResult b = run_pipeline(q, corpus());
    CHECK(same_params(a.stages[0].best.params, b.stages[0].best.params));
    CHECK_FALSE(same_params(a.stages[1].best.params, b.stages[1].best.params));
  }
  SUBCASE("a one-stage pipeline is run_stage") {
    PipelineConfig one = p;
    one.stages.resize(1);
    const PipelineResult r = run_pipeline(one, corpus());
    const StageResult direct = run_stage(one.stages[0], corpus(), one.model, nullptr,
                                         stage_seed(one.seed, "pre"));
    CHECK(same_params(r.final_checkpoint().params, direct.best.params));
  }
  SUBCASE("the stage cache returns identical results") {
    const auto cache = scratch_dir("cache");
    RunOptions opt;
    opt.cache_dir = cache;
    const PipelineResult first = run_pipeline(p, corpus(), opt);
    CHECK_FALSE(first.stages[0].cached);
    const PipelineResult second = run_pipeline(p, corpus(), opt);
    CHECK(second.stages[0].cached);
    CHECK(second.stages[1].cached);
    CHECK(same_params(second.final_checkpoint().params, a.final_checkpoint().params));
    CHECK(second.stages[1].history == a.stages[1].history);
    // A different seed misses the cache.
    const PipelineResult other = run_pipeline(two_stage(2), corpus(), opt);
    CHECK_FALSE(other.stages[0].cached);
  }
}

TEST_CASE("built-in pipelines") {
  const auto names = builtin_pipeline_names();
  CHECK(names.size() == 5);
  CHECK_THROWS(builtin_pipeline("nope", 1));

  const PipelineConfig zero = builtin_pipeline("simzerocr", 1);
  REQUIRE(zero.stages.size() == 3);
  CHECK(zero.stages[0].tasks == std::vector<Task>{Task::MT});
  CHECK(zero.stages[1].tasks == std::vector<Task>{Task::MT});
  CHECK(zero.stages[2].tasks == std::vector<Task>{Task::ASR, Task::MT});
  CHECK(zero.stages[2].loss.beta > 0.0);
  CHECK(zero.stages[2].loss.cross == CrossKind::Asr);

  const PipelineConfig base_zero = builtin_pipeline("baseline-zero", 1);
  CHECK(base_zero.stages.back().tasks == zero.stages.back().tasks);
  CHECK(base_zero.stages.back().loss.beta == 0.0);

  const PipelineConfig reg = builtin_pipeline("simregcr", 1);
  const PipelineConfig minus = builtin_pipeline("simregcr-minus", 1);
  const PipelineConfig base = builtin_pipeline("baseline-reg", 1);
  CHECK(reg.stages.back().loss.alpha == 3.0);
  CHECK(minus.stages.back().loss.alpha == 3.0);
  CHECK(base.stages.back().loss.alpha == 0.0);
  for (const auto& s : reg.stages) CHECK(s.loss.alpha > 0.0);
  for (std::size_t i = 0; i + 1 < minus.stages.size(); ++i) CHECK(minus.stages[i].loss.alpha == 0.0);
  for (const auto& s : base.stages) CHECK(s.loss.alpha == 0.0);
  CHECK(base.stages.back().tasks == std::vector<Task>{Task::ST});
  CHECK(base.stages[0].split_for(Task::MT) == "external");

  const std::string table = stage_table(zero);
  CHECK(table.find("asr-mt-finetune") != std::string::npos);
}
