// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "simcr/corpus.hpp"
#include "simcr/losses.hpp"
#include "simcr/model.hpp"
#include "simcr/optim.hpp"

namespace simcr {

/// One optimization stage of a pipeline.
struct StageConfig {
  std::string name;
  std::vector<Task> tasks;
  ConsistencyConfig loss;
  /// "scratch", the name of an earlier stage, or "file:<checkpoint path>".
  std::string init = "scratch";
  std::uint64_t max_steps = 2000;
  double peak_lr = 1e-3;
  std::uint64_t warmup_steps = 400;
  std::uint64_t eval_every = 200;
  /// Corpus split per task; tasks not listed train on "train".
  std::map<Task, std::string> corpus;
  /// Padded-size budgets per batch: tokens for text tasks, frames for speech.
  std::size_t text_budget = 400;
  std::size_t speech_budget = 1000;

  std::string split_for(Task task) const;
  void validate() const;
  /// Stable text form of every field; the basis of the stage cache key.
  std::string canonical() const;
};

struct PipelineConfig {
  std::string name;
  std::uint64_t seed = 1;
  ModelConfig model;
  std::vector<StageConfig> stages;
  /// Accept "file:" inits whose architecture hash differs.
  bool allow_config_mismatch = false;

  /// Checks every stage and that init references point only backwards.
  void validate() const;
};

struct EvalPoint {
  std::uint64_t step = 0;
  double val_loss = 0.0;
  bool operator==(const EvalPoint&) const = default;
};

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  AdamState optim;
  std::string stage;
  std::uint64_t step = 0;
  std::vector<EvalPoint> history;
};

/// Index of the lowest validation loss; ties go to the earliest entry.
std::size_t select_best(const std::vector<EvalPoint>& history);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError on a bad magic, version, checksum or structure.
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// As load_checkpoint, and refuses an architecture other than `expected`
/// unless `allow_mismatch` is set.
Checkpoint load_checkpoint_for(const std::filesystem::path& path,
                               const ModelConfig& expected, bool allow_mismatch);

/// Bitwise digest of all parameter values.
std::uint64_t params_hash(const ModelParams& params);

/// Thrown when RunOptions::stop_after ends a stage early; the stage can be
/// continued with RunOptions::resume.
class StageInterrupted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LogRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  LossParts parts;
  std::optional<double> val_loss;
};

struct StageResult {
  std::string name;
  Checkpoint best;
  std::vector<EvalPoint> history;
  std::size_t best_index = 0;
  std::uint64_t steps_run = 0;
  double seconds = 0.0;
  bool cached = false;
  /// Set when a non-finite value stopped the stage; `best` is the last good
  /// checkpoint.
  std::optional<std::string> aborted;
};

struct RunOptions {
  /// Per-stage checkpoints and CSV logs go here when set.
  std::filesystem::path out_dir;
  /// Reuse of stages whose full configuration chain was already trained.
  std::filesystem::path cache_dir;
  /// Continue interrupted stages from their last checkpoint in out_dir.
  bool resume = false;
  std::ostream* progress = nullptr;
  /// Called after every optimizer step.
  std::function<void(const std::string& stage, const LogRow&)> on_step;
  /// Stop after this many optimizer steps in total (for interruption tests).
  std::optional<std::uint64_t> stop_after;
};

/// Per-stage seed derived from the pipeline seed and the stage name.
std::uint64_t stage_seed(std::uint64_t pipeline_seed, const std::string& stage);

/// Sum over the stage tasks of the token-mean CE on `items`, without dropout.
double validation_loss(const Seq2Seq& model, const StageConfig& stage,
                       const std::vector<Triple>& items);

/// Trains one stage from `init` (or fresh parameters) and returns the
/// best-validation checkpoint. A zero-step stage returns `init` unchanged.
StageResult run_stage(const StageConfig& stage, const Corpus& corpus,
                      const ModelConfig& model, const Checkpoint* init,
                      std::uint64_t seed, const RunOptions& options = {});

struct PipelineResult {
  std::vector<StageResult> stages;
  const Checkpoint& final_checkpoint() const { return stages.back().best; }
  double seconds() const;
};

PipelineResult run_pipeline(const PipelineConfig& config, const Corpus& corpus,
                            const RunOptions& options = {});

/// Step counts, budgets and weights of the built-in pipelines.
struct PipelineScale {
  std::uint64_t mt_pretrain_steps = 3000;
  std::uint64_t mt_finetune_steps = 2000;
  /// ST finetune of the regular-scenario pipelines.
  std::uint64_t final_steps = 4000;
  std::uint64_t warmup_steps = 400;
  std::uint64_t eval_every = 500;
  double text_lr = 1e-3;
  double speech_lr = 1e-3;
  std::size_t text_budget = 400;
  std::size_t speech_budget = 1000;
  /// alpha for the MT pretrain, MT finetune and ST finetune of simregcr.
  double alpha_mt_pretrain = 0.5;
  double alpha_mt_finetune = 1.0;
  double alpha_st = 3.0;
  /// ASR & MT finetune of the zero-shot pipelines.
  std::uint64_t zero_steps = 6000;
  double zero_lr = 3e-3;
  double beta_zero = 5.0;
  double dropout_p = 0.1;
};

std::vector<std::string> builtin_pipeline_names();
/// "baseline-reg", "simregcr-minus", "simregcr", "baseline-zero" or
/// "simzerocr".
PipelineConfig builtin_pipeline(const std::string& name, std::uint64_t seed,
                                const PipelineScale& scale = {});

/// Human-readable table of the resolved stages.
std::string stage_table(const PipelineConfig& config);

}  // namespace simcr
