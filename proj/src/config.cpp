// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include "simcr/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace simcr {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

YAML::Node parse_yaml(const std::string& text) {
  try {
    YAML::Node root = YAML::Load(text);
    if (root.IsNull()) return YAML::Node(YAML::NodeType::Map);
    if (!root.IsMap()) throw ConfigError("config root must be a mapping");
    return root;
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("YAML syntax error: ") + e.what());
  }
}

void check_keys(const YAML::Node& node, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) throw ConfigError(where + " must be a mapping");
  const std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!known.count(key)) {
      std::string list;
      for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
      throw ConfigError("unknown key '" + key + "' in " + where + " (expected one of: " +
                        list + ")");
    }
  }
}

template <class T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& where) {
  const YAML::Node v = node[key];
  if (!v) return;
  try {
    if constexpr (std::is_unsigned_v<T>) {
      // yaml-cpp wraps negative numbers into large unsigned values.
      const auto text = v.as<std::string>();
      if (!text.empty() && text.front() == '-') throw YAML::Exception(v.Mark(), "negative");
    }
    out = v.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("bad value for " + where + "." + key);
  }
}

Task task_from(const YAML::Node& v, const std::string& where) {
  const auto name = v.as<std::string>();
  const auto task = parse_task(name);
  if (!task) throw ConfigError("unknown task '" + name + "' in " + where + " (mt, asr, st)");
  return *task;
}

void read_model(const YAML::Node& n, ModelConfig& m) {
  check_keys(n, "model",
             {"d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ffn", "dropout_p",
              "vocab_size", "max_positions", "frame_dim", "conv_kernel", "conv_stride",
              "conv_padding", "conv_layers", "conv_channels"});
  read(n, "d_model", m.d_model, "model");
  read(n, "n_heads", m.n_heads, "model");
  read(n, "n_enc_layers", m.n_enc_layers, "model");
  read(n, "n_dec_layers", m.n_dec_layers, "model");
  read(n, "d_ffn", m.d_ffn, "model");
  read(n, "dropout_p", m.dropout_p, "model");
  read(n, "vocab_size", m.vocab_size, "model");
  read(n, "max_positions", m.max_positions, "model");
  read(n, "frame_dim", m.frame_dim, "model");
  read(n, "conv_kernel", m.conv_kernel, "model");
  read(n, "conv_stride", m.conv_stride, "model");
  read(n, "conv_padding", m.conv_padding, "model");
  read(n, "conv_layers", m.conv_layers, "model");
  read(n, "conv_channels", m.conv_channels, "model");
}

void read_scale(const YAML::Node& n, PipelineScale& s) {
  check_keys(n, "scale",
             {"mt_pretrain_steps", "mt_finetune_steps", "final_steps", "warmup_steps",
              "eval_every", "text_lr", "speech_lr", "text_budget", "speech_budget",
              "alpha_mt_pretrain", "alpha_mt_finetune", "alpha_st", "beta_zero",
              "zero_steps", "zero_lr", "dropout_p"});
  read(n, "mt_pretrain_steps", s.mt_pretrain_steps, "scale");
  read(n, "mt_finetune_steps", s.mt_finetune_steps, "scale");
  read(n, "final_steps", s.final_steps, "scale");
  read(n, "warmup_steps", s.warmup_steps, "scale");
  read(n, "eval_every", s.eval_every, "scale");
  read(n, "text_lr", s.text_lr, "scale");
  read(n, "speech_lr", s.speech_lr, "scale");
  read(n, "text_budget", s.text_budget, "scale");
  read(n, "speech_budget", s.speech_budget, "scale");
  read(n, "alpha_mt_pretrain", s.alpha_mt_pretrain, "scale");
  read(n, "alpha_mt_finetune", s.alpha_mt_finetune, "scale");
  read(n, "alpha_st", s.alpha_st, "scale");
  read(n, "beta_zero", s.beta_zero, "scale");
  read(n, "zero_steps", s.zero_steps, "scale");
  read(n, "zero_lr", s.zero_lr, "scale");
  read(n, "dropout_p", s.dropout_p, "scale");
}

StageConfig read_stage(const YAML::Node& n, std::size_t index) {
  const std::string where = "stages[" + std::to_string(index) + "]";
  check_keys(n, where,
             {"name", "tasks", "init", "alpha", "beta", "label_smoothing", "cross",
              "frozen_teacher", "max_steps", "peak_lr", "warmup_steps", "eval_every",
              "corpus", "text_budget", "speech_budget"});
  StageConfig s;
  read(n, "name", s.name, where);
  if (!n["tasks"] || !n["tasks"].IsSequence()) {
    throw ConfigError(where + ".tasks must be a list such as [mt] or [asr, mt]");
  }
  for (const auto& t : n["tasks"]) s.tasks.push_back(task_from(t, where + ".tasks"));
  read(n, "init", s.init, where);
  read(n, "alpha", s.loss.alpha, where);
  read(n, "beta", s.loss.beta, where);
  read(n, "label_smoothing", s.loss.label_smoothing, where);
  read(n, "frozen_teacher", s.loss.frozen_teacher, where);
  if (n["cross"]) {
    const auto name = n["cross"].as<std::string>();
    const auto kind = parse_cross_kind(name);
    if (!kind) {
      throw ConfigError("unknown cross kind '" + name + "' in " + where +
                        " (auto, mt-st, asr, text)");
    }
    s.loss.cross = *kind;
  }
  read(n, "max_steps", s.max_steps, where);
  read(n, "peak_lr", s.peak_lr, where);
  read(n, "warmup_steps", s.warmup_steps, where);
  read(n, "eval_every", s.eval_every, where);
  read(n, "text_budget", s.text_budget, where);
  read(n, "speech_budget", s.speech_budget, where);
  if (const YAML::Node c = n["corpus"]) {
    if (!c.IsMap()) throw ConfigError(where + ".corpus must map tasks to splits");
    for (const auto& kv : c) {
      s.corpus[task_from(kv.first, where + ".corpus")] = kv.second.as<std::string>();
    }
  }
  return s;
}

}  // namespace

DataSpec parse_data_spec(const std::string& yaml) {
  const YAML::Node root = parse_yaml(yaml);
  check_keys(root, "data spec", {"task", "sizes", "filter"});
  DataSpec d;
  if (const YAML::Node t = root["task"]) {
    check_keys(t, "task",
               {"src_vocab_size", "tgt_vocab_size", "min_len", "max_len", "frame_dim",
                "min_repeat", "max_repeat", "jitter_std", "seed"});
    read(t, "src_vocab_size", d.task.src_vocab_size, "task");
    read(t, "tgt_vocab_size", d.task.tgt_vocab_size, "task");
    read(t, "min_len", d.task.min_len, "task");
    read(t, "max_len", d.task.max_len, "task");
    read(t, "frame_dim", d.task.frame_dim, "task");
    read(t, "min_repeat", d.task.min_repeat, "task");
    read(t, "max_repeat", d.task.max_repeat, "task");
    read(t, "jitter_std", d.task.jitter_std, "task");
    read(t, "seed", d.task.seed, "task");
  }
  if (const YAML::Node s = root["sizes"]) {
    check_keys(s, "sizes", {"train", "valid", "test", "external"});
    read(s, "train", d.sizes.train, "sizes");
    read(s, "valid", d.sizes.valid, "sizes");
    read(s, "test", d.sizes.test, "sizes");
    read(s, "external", d.sizes.external, "sizes");
  }
  if (const YAML::Node f = root["filter"]) {
    check_keys(f, "filter", {"min_frames", "max_frames", "max_len_ratio"});
    read(f, "min_frames", d.filter.min_frames, "filter");
    read(f, "max_frames", d.filter.max_frames, "filter");
    read(f, "max_len_ratio", d.filter.max_len_ratio, "filter");
  }
  try {
    d.task.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return d;
}

DataSpec load_data_spec(const std::filesystem::path& path) {
  return parse_data_spec(read_file(path));
}

std::string data_spec_to_yaml(const DataSpec& d) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "task" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "src_vocab_size" << YAML::Value << d.task.src_vocab_size;
  out << YAML::Key << "tgt_vocab_size" << YAML::Value << d.task.tgt_vocab_size;
  out << YAML::Key << "min_len" << YAML::Value << d.task.min_len;
  out << YAML::Key << "max_len" << YAML::Value << d.task.max_len;
  out << YAML::Key << "frame_dim" << YAML::Value << d.task.frame_dim;
  out << YAML::Key << "min_repeat" << YAML::Value << d.task.min_repeat;
  out << YAML::Key << "max_repeat" << YAML::Value << d.task.max_repeat;
  out << YAML::Key << "jitter_std" << YAML::Value << d.task.jitter_std;
  out << YAML::Key << "seed" << YAML::Value << d.task.seed;
  out << YAML::EndMap;
  out << YAML::Key << "sizes" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "train" << YAML::Value << d.sizes.train;
  out << YAML::Key << "valid" << YAML::Value << d.sizes.valid;
  out << YAML::Key << "test" << YAML::Value << d.sizes.test;
  out << YAML::Key << "external" << YAML::Value << d.sizes.external;
  out << YAML::EndMap;
  out << YAML::Key << "filter" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "min_frames" << YAML::Value << d.filter.min_frames;
  out << YAML::Key << "max_frames" << YAML::Value << d.filter.max_frames;
  out << YAML::Key << "max_len_ratio" << YAML::Value << d.filter.max_len_ratio;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

PipelineConfig parse_pipeline(const std::string& yaml) {
  const YAML::Node root = parse_yaml(yaml);
  check_keys(root, "pipeline file",
             {"name", "seed", "pipeline", "scale", "model", "stages",
              "allow_config_mismatch"});
  PipelineConfig p;
  std::uint64_t seed = 1;
  read(root, "seed", seed, "pipeline");
  const bool builtin = static_cast<bool>(root["pipeline"]);
  if (builtin == static_cast<bool>(root["stages"])) {
    throw ConfigError("a pipeline file needs exactly one of 'pipeline' and 'stages'");
  }
  if (builtin) {
    PipelineScale scale;
    if (const YAML::Node s = root["scale"]) read_scale(s, scale);
    try {
      p = builtin_pipeline(root["pipeline"].as<std::string>(), seed, scale);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  } else {
    if (root["scale"]) throw ConfigError("'scale' applies only to built-in pipelines");
    p.seed = seed;
    p.name = "custom";
    const YAML::Node stages = root["stages"];
    if (!stages.IsSequence()) throw ConfigError("'stages' must be a list");
    for (std::size_t i = 0; i < stages.size(); ++i) p.stages.push_back(read_stage(stages[i], i));
  }
  read(root, "name", p.name, "pipeline");
  read(root, "allow_config_mismatch", p.allow_config_mismatch, "pipeline");
  if (const YAML::Node m = root["model"]) read_model(m, p.model);
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return p;
}

PipelineConfig load_pipeline(const std::filesystem::path& path) {
  return parse_pipeline(read_file(path));
}

bool yaml_sets_seed(const std::string& yaml) {
  const YAML::Node root = parse_yaml(yaml);
  if (root["seed"]) return true;
  const YAML::Node task = root["task"];
  return task && task.IsMap() && task["seed"];
}

std::string pipeline_to_yaml(const PipelineConfig& p) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << p.name;
  out << YAML::Key << "seed" << YAML::Value << p.seed;
  out << YAML::Key << "allow_config_mismatch" << YAML::Value << p.allow_config_mismatch;
  const ModelConfig& m = p.model;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "d_model" << YAML::Value << m.d_model;
  out << YAML::Key << "n_heads" << YAML::Value << m.n_heads;
  out << YAML::Key << "n_enc_layers" << YAML::Value << m.n_enc_layers;
  out << YAML::Key << "n_dec_layers" << YAML::Value << m.n_dec_layers;
  out << YAML::Key << "d_ffn" << YAML::Value << m.d_ffn;
  out << YAML::Key << "dropout_p" << YAML::Value << m.dropout_p;
  out << YAML::Key << "vocab_size" << YAML::Value << m.vocab_size;
  out << YAML::Key << "max_positions" << YAML::Value << m.max_positions;
  out << YAML::Key << "frame_dim" << YAML::Value << m.frame_dim;
  out << YAML::Key << "conv_kernel" << YAML::Value << m.conv_kernel;
  out << YAML::Key << "conv_stride" << YAML::Value << m.conv_stride;
  out << YAML::Key << "conv_padding" << YAML::Value << m.conv_padding;
  out << YAML::Key << "conv_layers" << YAML::Value << m.conv_layers;
  out << YAML::Key << "conv_channels" << YAML::Value << m.conv_channels;
  out << YAML::EndMap;
  out << YAML::Key << "stages" << YAML::Value << YAML::BeginSeq;
  for (const StageConfig& s : p.stages) {
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << s.name;
    out << YAML::Key << "tasks" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (Task t : s.tasks) out << std::string(task_name(t));
    out << YAML::EndSeq;
    out << YAML::Key << "init" << YAML::Value << s.init;
    out << YAML::Key << "alpha" << YAML::Value << s.loss.alpha;
    out << YAML::Key << "beta" << YAML::Value << s.loss.beta;
    out << YAML::Key << "label_smoothing" << YAML::Value << s.loss.label_smoothing;
    out << YAML::Key << "cross" << YAML::Value << std::string(cross_kind_name(s.loss.cross));
    out << YAML::Key << "frozen_teacher" << YAML::Value << s.loss.frozen_teacher;
    out << YAML::Key << "max_steps" << YAML::Value << s.max_steps;
    out << YAML::Key << "peak_lr" << YAML::Value << s.peak_lr;
    out << YAML::Key << "warmup_steps" << YAML::Value << s.warmup_steps;
    out << YAML::Key << "eval_every" << YAML::Value << s.eval_every;
    out << YAML::Key << "text_budget" << YAML::Value << s.text_budget;
    out << YAML::Key << "speech_budget" << YAML::Value << s.speech_budget;
    out << YAML::Key << "corpus" << YAML::Value << YAML::Flow << YAML::BeginMap;
    for (Task t : s.tasks) {
      out << YAML::Key << std::string(task_name(t)) << YAML::Value << s.split_for(t);
    }
    out << YAML::EndMap;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace simcr
