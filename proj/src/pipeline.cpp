// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include "simcr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace simcr {

namespace {

bool valid_stage_name(const std::string& name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
}

bool cross_applies(const std::vector<Task>& tasks, CrossKind kind) {
  auto has = [&](Task t) { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); };
  switch (kind) {
    case CrossKind::Auto: return has(Task::ST) || has(Task::ASR);
    case CrossKind::MtSt: return has(Task::ST);
    case CrossKind::Asr: return has(Task::ASR);
    case CrossKind::Text: return has(Task::MT);
  }
  return false;
}

BatchModality modality_for(Task task) {
  return task == Task::MT ? BatchModality::Text : BatchModality::Speech;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

using Clock = std::chrono::steady_clock;

constexpr const char* kLogHeader = "step,lr,ce,intra,cross,total,val_loss";

std::string log_line(const LogRow& row) {
  std::ostringstream os;
  os << std::setprecision(9) << row.step << ',' << row.lr << ',' << row.parts.ce << ','
     << row.parts.intra << ',' << row.parts.cross << ',' << row.parts.total << ',';
  if (row.val_loss) os << *row.val_loss;
  return os.str();
}

// Keeps the header and the rows with step <= `last_step`.
void truncate_log(const std::filesystem::path& path, std::uint64_t last_step) {
  std::ifstream in(path);
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == kLogHeader) {
      kept.push_back(line);
      continue;
    }
    if (std::stoull(line.substr(0, line.find(','))) <= last_step) kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : kept) out << l << '\n';
}

}  // namespace

// ---------------------------------------------------------------------------

std::string StageConfig::split_for(Task task) const {
  auto it = corpus.find(task);
  return it == corpus.end() ? "train" : it->second;
}

void StageConfig::validate() const {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("stage '" + name + "': " + what);
  };
  if (!valid_stage_name(name)) {
    throw std::invalid_argument("stage name '" + name +
                                "' must be non-empty [A-Za-z0-9_-]");
  }
  if (tasks.empty()) fail("no tasks");
  std::set<Task> unique(tasks.begin(), tasks.end());
  if (unique.size() != tasks.size()) fail("duplicate task");
  try {
    loss.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (loss.beta > 0.0 && !cross_applies(tasks, loss.cross)) {
    fail("beta > 0 but the '" + std::string(cross_kind_name(loss.cross)) +
         "' cross term needs a task this stage does not train");
  }
  if (warmup_steps == 0) fail("warmup_steps must be >= 1");
  if (eval_every == 0) fail("eval_every must be >= 1");
  if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr)) fail("peak_lr must be finite and >= 0");
  if (text_budget == 0 || speech_budget == 0) fail("batch budgets must be positive");
  for (const auto& [task, split] : corpus) {
    if (!unique.count(task)) {
      fail("corpus given for task '" + std::string(task_name(task)) + "' not in the stage");
    }
    const auto names = Corpus::split_names();
    if (std::find(names.begin(), names.end(), split) == names.end()) {
      fail("unknown corpus split '" + split + "'");
    }
    if (task != Task::MT && split == "external") {
      fail("the external split has no speech for task '" + std::string(task_name(task)) +
           "'");
    }
  }
  if (init.empty()) fail("empty init reference");
}

std::string StageConfig::canonical() const {
  std::ostringstream os;
  os << "name=" << name << "\ntasks=";
  for (Task t : tasks) os << task_name(t) << ' ';
  os << "\nalpha=" << fmt(loss.alpha) << "\nbeta=" << fmt(loss.beta)
     << "\nlabel_smoothing=" << fmt(loss.label_smoothing)
     << "\ncross=" << cross_kind_name(loss.cross)
     << "\nfrozen_teacher=" << loss.frozen_teacher << "\ninit=" << init
     << "\nmax_steps=" << max_steps << "\npeak_lr=" << fmt(peak_lr)
     << "\nwarmup_steps=" << warmup_steps << "\neval_every=" << eval_every
     << "\ntext_budget=" << text_budget << "\nspeech_budget=" << speech_budget
     << "\ncorpus=";
  for (Task t : tasks) os << task_name(t) << ':' << split_for(t) << ' ';
  os << '\n';
  return os.str();
}

void PipelineConfig::validate() const {
  model.validate();
  if (stages.empty()) throw std::invalid_argument("pipeline '" + name + "' has no stages");
  std::set<std::string> seen;
  for (const StageConfig& s : stages) {
    s.validate();
    if (s.init != "scratch" && s.init.rfind("file:", 0) != 0 && !seen.count(s.init)) {
      throw std::invalid_argument("stage '" + s.name + "': init '" + s.init +
                                  "' does not name an earlier stage");
    }
    if (!seen.insert(s.name).second) {
      throw std::invalid_argument("duplicate stage name '" + s.name + "'");
    }
  }
}

std::size_t select_best(const std::vector<EvalPoint>& history) {
  if (history.empty()) throw std::invalid_argument("select_best: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i].val_loss < history[best].val_loss) best = i;
  }
  return best;
}

std::uint64_t stage_seed(std::uint64_t pipeline_seed, const std::string& stage) {
  return derive_seed(pipeline_seed, "stage:" + stage);
}

double validation_loss(const Seq2Seq& model, const StageConfig& stage,
                       const std::vector<Triple>& items) {
  if (items.empty()) throw std::invalid_argument("validation_loss: empty validation set");
  ad::NoGradGuard no_grad;
  constexpr std::size_t kChunk = 64;
  double total = 0.0;
  for (Task task : stage.tasks) {
    double weighted = 0.0;
    std::size_t tokens = 0;
    for (std::size_t start = 0; start < items.size(); start += kChunk) {
      const std::size_t end = std::min(items.size(), start + kChunk);
      const ForwardMode mode = ForwardMode::eval();
      EncoderOutput enc;
      if (task == Task::MT) {
        std::vector<std::vector<int>> text;
        for (std::size_t i = start; i < end; ++i) text.push_back(items[i].src);
        enc = model.encode_text(text, mode);
      } else {
        std::vector<const FrameMatrix*> frames;
        for (std::size_t i = start; i < end; ++i) frames.push_back(&items[i].frames);
        enc = model.encode_speech(frames, mode);
      }
      std::vector<std::vector<int>> targets;
      for (std::size_t i = start; i < end; ++i) {
        targets.push_back(task == Task::ASR ? items[i].src : items[i].tgt);
      }
      const int tag = task == Task::ASR ? Vocab::kSrcTag : Vocab::kTgtTag;
      const DecoderOutput out = model.forward_teacher_forced(enc, targets, tag, mode);
      const CeResult ce = ce_label_smooth(out.logp, out.targets, out.valid,
                                          stage.loss.label_smoothing);
      weighted += ce.loss.item() * static_cast<double>(ce.token_count);
      tokens += ce.token_count;
    }
    total += weighted / static_cast<double>(tokens);
  }
  return total;
}

// ---------------------------------------------------------------------------

StageResult run_stage(const StageConfig& stage, const Corpus& corpus,
                      const ModelConfig& model_config, const Checkpoint* init,
                      std::uint64_t seed, const RunOptions& options) {
  stage.validate();
  model_config.validate();
  if (init != nullptr && init->config.hash() != model_config.hash()) {
    throw std::invalid_argument("stage '" + stage.name +
                                "': init checkpoint has an incompatible model shape");
  }
  const auto started = Clock::now();
  StageResult result;
  result.name = stage.name;

  Checkpoint current;
  current.config = model_config;
  current.stage = stage.name;
  current.params = init != nullptr ? init->params.clone() : init_params(model_config, seed);
  if (stage.max_steps == 0) {
    if (init != nullptr) {
      result.best = *init;
    } else {
      result.best = current;
      result.best.optim = AdamState::for_params(current.params.tensors());
    }
    return result;
  }

  std::vector<std::pair<Task, BatchIterator>> iterators;
  for (Task task : stage.tasks) {
    const auto& items = corpus.split(stage.split_for(task));
    const std::size_t budget =
        task == Task::MT ? stage.text_budget : stage.speech_budget;
    iterators.emplace_back(task, BatchIterator(pointers(items), modality_for(task), budget,
                                               derive_seed(seed, "batches:" +
                                                                     std::string(task_name(task)))));
  }

  const bool write = !options.out_dir.empty();
  const auto best_path = options.out_dir / (stage.name + ".best.ckpt");
  const auto last_path = options.out_dir / (stage.name + ".last.ckpt");
  const auto log_path = options.out_dir / (stage.name + ".log.csv");

  Seq2Seq model(model_config, std::move(current.params));
  auto params = model.params().tensors();
  current.optim = AdamState::for_params(params);
  Checkpoint best;
  std::vector<EvalPoint> history;
  std::uint64_t start_step = 1;

  if (write && options.resume && std::filesystem::exists(last_path)) {
    Checkpoint last = load_checkpoint_for(last_path, model_config, false);
    if (last.stage != stage.name) {
      throw CheckpointError("resume: " + last_path.string() + " belongs to stage '" +
                            last.stage + "'");
    }
    auto saved = last.params.tensors();
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::copy(saved[i].data().begin(), saved[i].data().end(),
                params[i].mutable_data().begin());
    }
    current.optim = std::move(last.optim);
    history = last.history;
    start_step = last.step + 1;
    if (!history.empty()) best = load_checkpoint_for(best_path, model_config, false);
    if (std::filesystem::exists(log_path)) truncate_log(log_path, last.step);
  } else if (write) {
    std::ofstream(log_path, std::ios::trunc) << kLogHeader << '\n';
  }
  std::ofstream log;
  if (write) log.open(log_path, std::ios::app);

  auto snapshot = [&](std::uint64_t step) {
    Checkpoint c;
    c.config = model_config;
    c.params = model.params().clone();
    c.optim = current.optim;
    c.stage = stage.name;
    c.step = step;
    c.history = history;
    return c;
  };
  auto progress = [&](const std::string& text) {
    if (options.progress != nullptr) *options.progress << text << std::flush;
  };

  std::uint64_t steps_this_call = 0;
  for (std::uint64_t step = start_step; step <= stage.max_steps; ++step) {
    const double lr = lr_inverse_sqrt(step, stage.warmup_steps, stage.peak_lr);
    std::vector<TaskBatch> batches;
    for (auto& [task, it] : iterators) batches.push_back({task, it.batch_at(step - 1)});
    Rng step_rng(derive_seed(seed, step));
    LogRow row;
    row.step = step;
    row.lr = lr;
    try {
      Objective obj = composite_objective(model, batches, stage.loss, step_rng);
      row.parts = obj.parts;
      obj.total.backward();
      for (auto& p : params) {
        for (double g : p.grad()) {
          if (!std::isfinite(g)) throw ad::NumericalError("non-finite gradient");
        }
      }
      adam_step(params, current.optim, lr);
      for (auto& p : params) p.zero_grad();
    } catch (const ad::NumericalError& e) {
      result.aborted = "step " + std::to_string(step) + ": " + e.what();
      progress("  [" + stage.name + "] aborted at " + *result.aborted + "\n");
      break;
    }
    result.steps_run = step;
    ++steps_this_call;

    if (step % stage.eval_every == 0 || step == stage.max_steps) {
      double val = 0.0;
      try {
        val = validation_loss(model, stage, corpus.valid);
      } catch (const ad::NumericalError& e) {
        result.aborted = "step " + std::to_string(step) + " validation: " + e.what();
        progress("  [" + stage.name + "] aborted at " + *result.aborted + "\n");
        break;
      }
      row.val_loss = val;
      history.push_back({step, val});
      const bool improved = select_best(history) == history.size() - 1;
      if (improved) {
        best = snapshot(step);
        if (write) save_checkpoint(best, best_path);
      }
      if (write) save_checkpoint(snapshot(step), last_path);
      char buf[160];
      std::snprintf(buf, sizeof buf, "  [%s] step %llu/%llu  loss %.4f  val %.4f%s\n",
                    stage.name.c_str(), static_cast<unsigned long long>(step),
                    static_cast<unsigned long long>(stage.max_steps), row.parts.total, val,
                    improved ? " *" : "");
      progress(buf);
    }
    if (write) log << log_line(row) << '\n' << std::flush;
    if (options.on_step) options.on_step(stage.name, row);
    if (options.stop_after && steps_this_call >= *options.stop_after &&
        step < stage.max_steps) {
      if (write) save_checkpoint(snapshot(step), last_path);
      throw StageInterrupted("stage '" + stage.name + "' interrupted at step " +
                             std::to_string(step));
    }
  }

  if (history.empty()) {
    // Aborted before the first evaluation: the initial state is the last good one.
    best.config = model_config;
    best.stage = stage.name;
    best.params = init != nullptr ? init->params.clone() : init_params(model_config, seed);
    best.optim = AdamState::for_params(best.params.tensors());
  }
  best.history = history;
  result.history = history;
  result.best_index = history.empty() ? 0 : select_best(history);
  result.best = std::move(best);
  if (write) save_checkpoint(result.best, best_path);
  result.seconds = std::chrono::duration<double>(Clock::now() - started).count();
  return result;
}

// ---------------------------------------------------------------------------

double PipelineResult::seconds() const {
  double s = 0.0;
  for (const auto& st : stages) s += st.seconds;
  return s;
}

namespace {

struct CacheEntry {
  std::filesystem::path ckpt, meta, log;
};

CacheEntry cache_entry(const std::filesystem::path& dir, std::uint64_t key) {
  const std::string stem = hex(key);
  return {dir / (stem + ".ckpt"), dir / (stem + ".meta"), dir / (stem + ".log.csv")};
}

std::optional<StageResult> load_cached(const CacheEntry& e, const std::string& name) {
  if (!std::filesystem::exists(e.ckpt) || !std::filesystem::exists(e.meta)) {
    return std::nullopt;
  }
  StageResult r;
  r.name = name;
  r.best = load_checkpoint(e.ckpt);
  r.history = r.best.history;
  std::ifstream meta(e.meta);
  if (!(meta >> r.seconds >> r.steps_run)) return std::nullopt;
  r.best_index = r.history.empty() ? 0 : select_best(r.history);
  r.cached = true;
  return r;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, const Corpus& corpus,
                            const RunOptions& options) {
  config.validate();
  if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);
  if (!options.cache_dir.empty()) std::filesystem::create_directories(options.cache_dir);
  const std::uint64_t base_key =
      fnv1a(config.model.canonical() + "dropout=" + fmt(config.model.dropout_p) +
                "\ncorpus=" + hex(corpus_hash(corpus)) + "\nseed=" +
                std::to_string(config.seed) + "\n");
  PipelineResult out;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::uint64_t> keys;
  for (const StageConfig& stage : config.stages) {
    const Checkpoint* init = nullptr;
    Checkpoint external;
    std::uint64_t key = base_key;
    if (stage.init.rfind("file:", 0) == 0) {
      const std::filesystem::path path = stage.init.substr(5);
      external = load_checkpoint_for(path, config.model, config.allow_config_mismatch);
      external.config = config.model;
      init = &external;
      key = fnv1a(hex(params_hash(external.params)), key);
    } else if (stage.init != "scratch") {
      init = &out.stages[index.at(stage.init)].best;
      key = keys.at(stage.init);
    }
    key = fnv1a(stage.canonical(), key);
    keys[stage.name] = key;
    const std::uint64_t seed = stage_seed(config.seed, stage.name);
    if (options.progress != nullptr) {
      *options.progress << "stage " << stage.name << " (" << config.name << ")\n";
    }

    std::optional<StageResult> result;
    const bool use_cache = !options.cache_dir.empty() && !options.resume;
    CacheEntry entry;
    if (use_cache) {
      entry = cache_entry(options.cache_dir, key);
      result = load_cached(entry, stage.name);
      if (result && options.progress != nullptr) {
        *options.progress << "  [" << stage.name << "] reused cached stage " << hex(key)
                          << '\n';
      }
    }
    if (result) {
      if (!options.out_dir.empty()) {
        save_checkpoint(result->best, options.out_dir / (stage.name + ".best.ckpt"));
        if (std::filesystem::exists(entry.log)) {
          std::filesystem::copy_file(entry.log, options.out_dir / (stage.name + ".log.csv"),
                                     std::filesystem::copy_options::overwrite_existing);
        }
      }
    } else {
      result = run_stage(stage, corpus, config.model, init, seed, options);
      if (use_cache && !result->aborted) {
        save_checkpoint(result->best, entry.ckpt);
        std::ofstream(entry.meta) << std::setprecision(17) << result->seconds << ' '
                                  << result->steps_run << '\n';
        const auto log = options.out_dir / (stage.name + ".log.csv");
        if (!options.out_dir.empty() && std::filesystem::exists(log)) {
          std::filesystem::copy_file(log, entry.log,
                                     std::filesystem::copy_options::overwrite_existing);
        }
      }
    }
    index[stage.name] = out.stages.size();
    const bool aborted = result->aborted.has_value();
    out.stages.push_back(std::move(*result));
    if (aborted) break;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> builtin_pipeline_names() {
  return {"baseline-reg", "simregcr-minus", "simregcr", "baseline-zero", "simzerocr"};
}

PipelineConfig builtin_pipeline(const std::string& name, std::uint64_t seed,
                                const PipelineScale& scale) {
  const auto names = builtin_pipeline_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown pipeline '" + name + "' (built-in: " + list + ")");
  }
  PipelineConfig p;
  p.name = name;
  p.seed = seed;
  p.model.dropout_p = scale.dropout_p;
  const bool full_cr = name == "simregcr";

  auto base = [&](std::string stage_name, std::vector<Task> tasks, std::string init,
                  std::uint64_t steps, double lr) {
    StageConfig s;
    s.name = std::move(stage_name);
    s.tasks = std::move(tasks);
    s.init = std::move(init);
    s.max_steps = steps;
    s.peak_lr = lr;
    s.warmup_steps = scale.warmup_steps;
    s.eval_every = scale.eval_every;
    s.text_budget = scale.text_budget;
    s.speech_budget = scale.speech_budget;
    return s;
  };
  StageConfig pretrain =
      base("mt-pretrain", {Task::MT}, "scratch", scale.mt_pretrain_steps, scale.text_lr);
  pretrain.corpus[Task::MT] = "external";
  StageConfig finetune = base("mt-finetune", {Task::MT}, "mt-pretrain",
                              scale.mt_finetune_steps, scale.text_lr);
  if (full_cr) {
    pretrain.loss.alpha = scale.alpha_mt_pretrain;
    finetune.loss.alpha = scale.alpha_mt_finetune;
  }
  p.stages = {pretrain, finetune};
  if (name == "baseline-zero" || name == "simzerocr") {
    StageConfig joint = base("asr-mt-finetune", {Task::ASR, Task::MT}, "mt-finetune",
                             scale.zero_steps, scale.zero_lr);
    if (name == "simzerocr") {
      joint.loss.beta = scale.beta_zero;
      joint.loss.cross = CrossKind::Asr;
    }
    p.stages.push_back(joint);
  } else {
    StageConfig st =
        base("st-finetune", {Task::ST}, "mt-finetune", scale.final_steps, scale.speech_lr);
    if (name != "baseline-reg") st.loss.alpha = scale.alpha_st;
    p.stages.push_back(st);
  }
  return p;
}

std::string stage_table(const PipelineConfig& config) {
  std::ostringstream os;
  os << "pipeline " << config.name << "  seed " << config.seed << "  dropout "
     << config.model.dropout_p << '\n';
  os << std::left << std::setw(18) << "stage" << std::setw(16) << "init" << std::setw(10)
     << "tasks" << std::setw(7) << "alpha" << std::setw(7) << "beta" << std::setw(7)
     << "cross" << std::setw(7) << "steps" << std::setw(9) << "peak_lr" << std::setw(8)
     << "warmup" << "corpus\n";
  for (const StageConfig& s : config.stages) {
    std::string tasks, corpora;
    for (Task t : s.tasks) {
      tasks += (tasks.empty() ? "" : "+") + std::string(task_name(t));
      corpora += (corpora.empty() ? "" : " ") + std::string(task_name(t)) + ":" +
                 s.split_for(t);
    }
    os << std::left << std::setw(18) << s.name << std::setw(16) << s.init << std::setw(10)
       << tasks << std::setw(7) << s.loss.alpha << std::setw(7) << s.loss.beta
       << std::setw(7) << cross_kind_name(s.loss.cross) << std::setw(7) << s.max_steps
       << std::setw(9) << s.peak_lr << std::setw(8) << s.warmup_steps << corpora << '\n';
  }
  return os.str();
}

}  // namespace simcr
