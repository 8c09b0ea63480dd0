// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

// simcr: generation, training, evaluation and reporting entry point.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "simcr/config.hpp"
#include "simcr/corpus.hpp"
#include "simcr/pipeline.hpp"
#include "simcr/report.hpp"
#include "simcr/runtime.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace simcr;

namespace {

constexpr const char* kToolVersion = "1.0.0";
constexpr const char* kCorpusFile = "corpus.simcr";

/// Exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string now_iso() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("SIMCR_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto seed = std::stoull(v, &used);
    if (v[used] != '\0') throw std::invalid_argument("trailing");
    return seed;
  } catch (const std::exception&) {
    throw UsageError(std::string("SIMCR_SEED is not an unsigned integer: '") + v + "'");
  }
}

struct Invocation {
  std::string command_line;
  std::string started = now_iso();
};

json corpus_manifest(const Corpus& c) {
  return {{"src_vocab_size", c.spec.src_vocab_size},
          {"tgt_vocab_size", c.spec.tgt_vocab_size},
          {"min_len", c.spec.min_len},
          {"max_len", c.spec.max_len},
          {"frame_dim", c.spec.frame_dim},
          {"min_repeat", c.spec.min_repeat},
          {"max_repeat", c.spec.max_repeat},
          {"jitter_std", c.spec.jitter_std},
          {"seed", c.spec.seed},
          {"counts",
           {{"train", c.train.size()},
            {"valid", c.valid.size()},
            {"test", c.test.size()},
            {"external", c.external.size()}}},
          {"hash", hex(corpus_hash(c))}};
}

void write_manifest(const fs::path& dir, const Invocation& inv, const std::string& command,
                    json body) {
  body["tool"] = "simcr";
  body["tool_version"] = kToolVersion;
  body["command"] = command;
  body["command_line"] = inv.command_line;
  body["timestamps"] = {{"started", inv.started}, {"finished", now_iso()}};
  std::vector<std::string> artifacts;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name != "manifest.json") artifacts.push_back(name);
  }
  std::sort(artifacts.begin(), artifacts.end());
  body["artifacts"] = artifacts;
  write_text(dir / "manifest.json", body.dump(2) + "\n");
}

void prepare_out_dir(const fs::path& dir, bool force, bool resume = false) {
  if (fs::exists(dir / "manifest.json") && !force && !resume) {
    throw UsageError(dir.string() + " already holds a run (manifest.json); pass --force to "
                     "overwrite");
  }
  fs::create_directories(dir);
}

Corpus load_data_dir(const fs::path& dir) {
  const fs::path file = dir / kCorpusFile;
  if (!fs::exists(file)) {
    throw UsageError("no corpus at " + file.string() + " (run gen-data first)");
  }
  std::optional<TaskSpec> expected;
  if (fs::exists(dir / "spec.yaml")) expected = load_data_spec(dir / "spec.yaml").task;
  std::vector<std::string> warnings;
  Corpus c = load_corpus(file, expected ? &*expected : nullptr, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  return c;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

int cmd_gen_data(const GenArgs& a, const Invocation& inv) {
  DataSpec spec;
  std::string spec_text;
  if (!a.spec.empty()) {
    spec_text = read_text(a.spec);
    spec = parse_data_spec(spec_text);
  }
  std::string seed_source = "default";
  if (a.seed) {
    spec.task.seed = *a.seed;
    seed_source = "--seed";
  } else if (!spec_text.empty() && yaml_sets_seed(spec_text)) {
    seed_source = "spec file";
  } else if (const auto env = env_seed()) {
    spec.task.seed = *env;
    seed_source = "SIMCR_SEED";
  }
  const fs::path out = a.out;
  prepare_out_dir(out, a.force);
  const Corpus corpus = filter_corpus(generate_corpus(spec.task, spec.sizes), spec.filter);
  save_corpus(corpus, out / kCorpusFile);
  const std::string resolved = data_spec_to_yaml(spec);
  write_text(out / "spec.yaml", resolved);
  write_manifest(out, inv, "gen-data",
                 {{"config_hash", hex(fnv1a(resolved))},
                  {"config", resolved},
                  {"corpus", corpus_manifest(corpus)},
                  {"seeds", {{"corpus", spec.task.seed}, {"source", seed_source}}}});
  std::cout << "corpus " << hex(corpus_hash(corpus)) << ": train " << corpus.train.size()
            << ", valid " << corpus.valid.size() << ", test " << corpus.test.size()
            << ", external " << corpus.external.size() << " -> " << (out / kCorpusFile).string()
            << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string pipeline;
  std::string data;
  std::string out;
  std::string cache;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
  bool resume = false;
  bool force = false;
  bool allow_mismatch = false;
  bool quiet = false;
};

PipelineConfig resolve_pipeline(const TrainArgs& a, std::string& source) {
  const auto names = builtin_pipeline_names();
  PipelineConfig p;
  std::optional<std::uint64_t> seed = a.seed;
  if (std::find(names.begin(), names.end(), a.pipeline) != names.end()) {
    if (!seed) seed = env_seed();
    p = builtin_pipeline(a.pipeline, seed.value_or(1));
    source = "built-in";
  } else {
    if (!fs::exists(a.pipeline)) {
      std::string list;
      for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
      throw UsageError("'" + a.pipeline + "' is neither a built-in pipeline (" + list +
                       ") nor a pipeline file");
    }
    const std::string text = read_text(a.pipeline);
    p = parse_pipeline(text);
    source = a.pipeline;
    if (!seed && !yaml_sets_seed(text)) seed = env_seed();
    if (seed) p.seed = *seed;
  }
  if (a.allow_mismatch) p.allow_config_mismatch = true;
  for (const StageConfig& s : p.stages) {
    if (s.init.rfind("file:", 0) == 0 && !fs::exists(s.init.substr(5))) {
      throw UsageError("stage '" + s.name + "': init checkpoint " + s.init.substr(5) +
                       " does not exist");
    }
  }
  return p;
}

int cmd_train(const TrainArgs& a, const Invocation& inv) {
  std::string source;
  const PipelineConfig p = resolve_pipeline(a, source);
  if (a.dry_run) {
    std::cout << stage_table(p);
    return 0;
  }
  if (a.data.empty() || a.out.empty()) throw UsageError("train needs --data and --out");
  const Corpus corpus = load_data_dir(a.data);
  const fs::path out = a.out;
  prepare_out_dir(out, a.force, a.resume);
  const std::string resolved = pipeline_to_yaml(p);
  write_text(out / "pipeline.yaml", resolved);

  RunOptions options;
  options.out_dir = out;
  options.cache_dir = a.cache;
  options.resume = a.resume;
  if (!a.quiet) options.progress = &std::cerr;
  std::map<std::string, LogRow> last_rows;
  options.on_step = [&](const std::string& stage, const LogRow& row) { last_rows[stage] = row; };
  const PipelineResult result = run_pipeline(p, corpus, options);

  json stages = json::array();
  for (const StageResult& s : result.stages) {
    json st = {{"name", s.name},
               {"seconds", s.seconds},
               {"steps_run", s.steps_run},
               {"cached", s.cached},
               {"checkpoint", s.name + ".best.ckpt"},
               {"aborted", s.aborted ? json(*s.aborted) : json(nullptr)}};
    if (!s.history.empty()) {
      st["best_step"] = s.history[s.best_index].step;
      st["best_val_loss"] = s.history[s.best_index].val_loss;
    }
    if (auto it = last_rows.find(s.name); it != last_rows.end()) {
      st["last_loss"] = {{"ce", it->second.parts.ce},
                         {"intra", it->second.parts.intra},
                         {"cross", it->second.parts.cross},
                         {"total", it->second.parts.total}};
    }
    stages.push_back(st);
  }
  const json summary = {{"pipeline", p.name},
                        {"seed", p.seed},
                        {"seconds", result.seconds()},
                        {"final_checkpoint", "final.ckpt"},
                        {"params_hash", hex(params_hash(result.final_checkpoint().params))},
                        {"stages", stages}};
  save_checkpoint(result.final_checkpoint(), out / "final.ckpt");
  write_text(out / "summary.json", summary.dump(2) + "\n");
  json seeds = {{"pipeline", p.seed}};
  for (const StageConfig& s : p.stages) seeds["stage:" + s.name] = stage_seed(p.seed, s.name);
  write_manifest(out, inv, "train",
                 {{"pipeline", p.name},
                  {"pipeline_source", source},
                  {"config_hash", hex(fnv1a(resolved))},
                  {"config", resolved},
                  {"data_dir", fs::absolute(a.data).string()},
                  {"corpus", corpus_manifest(corpus)},
                  {"seeds", seeds}});
  if (result.stages.back().aborted) {
    std::cerr << "error: stage '" << result.stages.back().name
              << "' aborted on a non-finite value (" << *result.stages.back().aborted
              << "); kept the last good checkpoint\n";
    return 2;
  }
  std::cout << "trained " << p.name << " in " << std::fixed << std::setprecision(1)
            << result.seconds() << " s -> " << (out / "final.ckpt").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string task = "st";
  std::string tag;
  std::string split = "test";
  std::size_t beam = 5;
  double lenpen = 1.0;
  double max_len_factor = 2.0;
  std::size_t samples = 5;
  std::size_t limit = 0;
  bool greedy = false;
  bool diagnostics = false;
  bool paper_decoding = false;
  bool force = false;
};

int cmd_evaluate(const EvalArgs& a, const Invocation& inv, const std::string& command) {
  const auto task = parse_task(a.task);
  if (!task) throw UsageError("unknown task '" + a.task + "' (st, asr, mt)");
  EvalOptions opt;
  opt.greedy = a.greedy;
  opt.samples = a.samples;
  opt.diagnostics = a.diagnostics;
  opt.decode.beam_size = a.beam;
  opt.decode.length_penalty = a.lenpen;
  opt.decode.max_len_factor = a.max_len_factor;
  if (a.paper_decoding) {
    opt.decode.beam_size = DecodeConfig::paper_preset().beam_size;
    opt.decode.length_penalty = DecodeConfig::paper_preset().length_penalty;
  }
  const std::string tag = a.tag.empty() ? (*task == Task::ASR ? "src" : "tgt") : a.tag;
  const auto tag_id = Vocab::parse_tag(tag);
  if (!tag_id) {
    std::string list;
    for (const auto& n : Vocab::tag_names()) list += (list.empty() ? "" : ", ") + n;
    throw UsageError("unknown language tag '" + tag + "'; registered tags: " + list);
  }
  opt.decode.lang_tag = *tag_id;
  try {
    opt.decode.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (!fs::exists(a.checkpoint)) throw UsageError("no checkpoint at " + a.checkpoint);
  const Corpus corpus = load_data_dir(a.data);
  std::vector<Triple> items;
  try {
    items = corpus.split(a.split);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (a.limit > 0 && a.limit < items.size()) items.resize(a.limit);
  if (*task != Task::MT || a.diagnostics) {
    for (const Triple& t : items) {
      if (!t.has_speech()) throw UsageError("split '" + a.split + "' has no speech");
    }
  }
  const fs::path out = a.out;
  prepare_out_dir(out, a.force);

  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Seq2Seq model(ckpt.config, std::move(ckpt.params));
  opt.checkpoint_label = a.checkpoint;
  const EvalReport report = evaluate(model, items, *task, opt);
  write_text(out / "report.json", report.to_json());
  write_text(out / "report.txt", report.to_text());
  if (a.diagnostics) {
    export_representations(collect_representations(model, items),
                           out / "representations.csv");
  }
  write_manifest(out, inv, command,
                 {{"checkpoint", fs::absolute(a.checkpoint).string()},
                  {"checkpoint_stage", ckpt.stage},
                  {"checkpoint_step", ckpt.step},
                  {"data_dir", fs::absolute(a.data).string()},
                  {"split", a.split},
                  {"corpus", corpus_manifest(corpus)},
                  {"seeds", {{"corpus", corpus.spec.seed}}},
                  {"config_hash", hex(ckpt.config.hash())}});
  std::cout << report.to_text();
  return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
  bool force = false;
};

struct Row {
  std::string run;
  std::string pipeline = "-";
  std::optional<EvalReport> report;
  std::optional<json> last_loss;
};

std::optional<json> read_json(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    return json::parse(read_text(path));
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

std::string cell(const std::optional<double>& v, int precision) {
  if (!v) return "absent";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

int cmd_report(const ReportArgs& a, const Invocation& inv) {
  if (a.runs.empty()) throw UsageError("report needs at least one run directory");
  std::vector<Row> rows;
  for (const auto& dir_text : a.runs) {
    const fs::path dir = dir_text;
    Row row;
    row.run = dir.filename().empty() ? dir.parent_path().filename().string()
                                     : dir.filename().string();
    fs::path report_path = dir / "report.json";
    if (!fs::exists(report_path)) report_path = dir / "eval" / "report.json";
    if (auto j = read_json(report_path)) {
      try {
        row.report = EvalReport::from_json(j->dump());
      } catch (const std::exception&) {
        row.report.reset();
      }
    }
    // The training summary sits next to the evaluated checkpoint.
    std::vector<fs::path> summary_candidates = {dir / "summary.json"};
    if (auto m = read_json(report_path.parent_path() / "manifest.json");
        m && m->contains("checkpoint")) {
      summary_candidates.push_back(
          fs::path(m->at("checkpoint").get<std::string>()).parent_path() / "summary.json");
    }
    for (const auto& candidate : summary_candidates) {
      if (auto s = read_json(candidate)) {
        row.pipeline = s->value("pipeline", "-");
        if (s->contains("stages") && !s->at("stages").empty() &&
            s->at("stages").back().contains("last_loss")) {
          row.last_loss = s->at("stages").back().at("last_loss");
        }
        break;
      }
    }
    rows.push_back(std::move(row));
  }

  std::ostringstream table, csv;
  table << std::left << std::setw(24) << "run" << std::setw(16) << "pipeline" << std::setw(6)
        << "task" << std::setw(9) << "BLEU" << std::setw(10) << "simsearch" << std::setw(9)
        << "src-voc" << std::setw(9) << "ce" << std::setw(9) << "intra" << "cross\n";
  csv << "run,pipeline,task,bleu,simsearch,src_vocab_rate,ce,intra,cross\n";
  std::vector<ScatterPoint> points;
  for (const Row& r : rows) {
    std::optional<double> bleu, sim, src, ce, intra, cross;
    std::string task = "absent";
    if (r.report) {
      bleu = r.report->bleu;
      src = r.report->src_vocab_rate;
      task = r.report->task;
      if (r.report->simsearch) sim = r.report->simsearch->mean;
    }
    if (r.last_loss) {
      ce = r.last_loss->at("ce").get<double>();
      intra = r.last_loss->at("intra").get<double>();
      cross = r.last_loss->at("cross").get<double>();
    }
    table << std::left << std::setw(24) << r.run << std::setw(16) << r.pipeline
          << std::setw(6) << task << std::setw(9) << cell(bleu, 2) << std::setw(10)
          << cell(sim, 3) << std::setw(9) << cell(src, 3) << std::setw(9) << cell(ce, 3)
          << std::setw(9) << cell(intra, 3) << cell(cross, 3) << '\n';
    csv << r.run << ',' << r.pipeline << ',' << task << ',' << cell(bleu, 4) << ','
        << cell(sim, 4) << ',' << cell(src, 4) << ',' << cell(ce, 4) << ',' << cell(intra, 4)
        << ',' << cell(cross, 4) << '\n';
    if (bleu && sim) points.push_back({r.run, *sim, *bleu});
  }
  const fs::path out = a.out;
  prepare_out_dir(out, a.force);
  write_text(out / "comparison.txt", table.str());
  write_text(out / "comparison.csv", csv.str());
  write_text(out / "scatter.svg",
             scatter_svg(points, "ST BLEU vs. similarity search accuracy",
                         "similarity search accuracy", "BLEU"));
  json runs = json::array();
  for (const auto& r : a.runs) runs.push_back(fs::absolute(r).string());
  write_manifest(out, inv, "report", {{"runs", runs}, {"seeds", json::object()}});
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  Invocation inv;
  for (int i = 0; i < argc; ++i) inv.command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"simcr: consistency-regularized speech translation on a synthetic task"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate, filter and save a toy corpus");
  gen_cmd->add_option("--spec", gen.spec, "Data spec YAML (defaults when omitted)")
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Corpus seed override");
  gen_cmd->add_flag("--force", gen.force, "Overwrite an existing output directory");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run a training pipeline");
  train_cmd
      ->add_option("--pipeline", train.pipeline,
                   "Built-in pipeline name or pipeline YAML file")
      ->required();
  train_cmd->add_option("--data", train.data, "Directory written by gen-data");
  train_cmd->add_option("--out", train.out, "Output directory");
  train_cmd->add_option("--cache", train.cache, "Stage cache directory");
  train_cmd->add_option("--seed", train.seed, "Pipeline seed override");
  train_cmd->add_flag("--dry-run", train.dry_run, "Print the resolved stages and exit");
  train_cmd->add_flag("--resume", train.resume, "Continue an interrupted run in --out");
  train_cmd->add_flag("--force", train.force, "Overwrite an existing output directory");
  train_cmd->add_flag("--allow-config-mismatch", train.allow_mismatch,
                      "Accept init checkpoints with a different architecture hash");
  train_cmd->add_flag("--quiet", train.quiet, "No progress output");

  EvalArgs eval;
  auto add_eval_options = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    cmd->add_option("--data", eval.data, "Directory written by gen-data")->required();
    cmd->add_option("--out", eval.out, "Output directory")->required();
    cmd->add_option("--task", eval.task, "st, asr or mt");
    cmd->add_option("--tag", eval.tag, "Decoder language tag (src or tgt)");
    cmd->add_option("--split", eval.split, "Corpus split");
    cmd->add_option("--beam", eval.beam, "Beam size");
    cmd->add_option("--lenpen", eval.lenpen, "Length penalty exponent");
    cmd->add_option("--max-len-factor", eval.max_len_factor,
                    "Output length cap relative to the source");
    cmd->add_option("--samples", eval.samples, "Sample decodes in the report");
    cmd->add_option("--limit", eval.limit, "Evaluate only the first N items");
    cmd->add_flag("--greedy", eval.greedy, "Greedy decoding");
    cmd->add_flag("--paper-decoding", eval.paper_decoding, "Beam 8, length penalty 1.2");
    cmd->add_flag("--force", eval.force, "Overwrite an existing output directory");
  };
  auto* eval_cmd = app.add_subcommand("evaluate", "Decode a split and write an EvalReport");
  add_eval_options(eval_cmd);
  eval_cmd->add_flag("--diagnostics", eval.diagnostics,
                     "Add similarity search and export representations");
  auto* sim_cmd =
      app.add_subcommand("simsearch", "Alias for evaluate --diagnostics");
  add_eval_options(sim_cmd);

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "Compare evaluated runs");
  rep_cmd->add_option("runs", rep.runs, "Run directories")->required();
  rep_cmd->add_option("--out", rep.out, "Output directory")->required();
  rep_cmd->add_flag("--force", rep.force, "Overwrite an existing output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, inv);
    if (train_cmd->parsed()) return cmd_train(train, inv);
    if (eval_cmd->parsed()) return cmd_evaluate(eval, inv, "evaluate");
    if (sim_cmd->parsed()) {
      eval.diagnostics = true;
      return cmd_evaluate(eval, inv, "simsearch");
    }
    if (rep_cmd->parsed()) return cmd_report(rep, inv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
