// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "simcr/corpus.hpp"
#include "simcr/pipeline.hpp"

namespace simcr {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything gen-data needs.
struct DataSpec {
  TaskSpec task;
  SplitSizes sizes;
  FilterConfig filter;
};

/// Keys: task.{src_vocab_size, ..., seed}, sizes.{train, valid, test,
/// external}, filter.{min_frames, max_frames, max_len_ratio}. Missing keys keep
/// their defaults; unknown keys are errors.
DataSpec parse_data_spec(const std::string& yaml);
DataSpec load_data_spec(const std::filesystem::path& path);
std::string data_spec_to_yaml(const DataSpec& spec);

/// A pipeline file either names a built-in pipeline (`pipeline:` plus optional
/// `scale:` overrides) or lists `stages:` explicitly. `seed`, `name` and
/// `model:` are accepted in both forms.
PipelineConfig parse_pipeline(const std::string& yaml);
PipelineConfig load_pipeline(const std::filesystem::path& path);
/// True when the document sets `seed` at the top level or under `task:`.
bool yaml_sets_seed(const std::string& yaml);

/// Fully resolved explicit form; parse_pipeline(pipeline_to_yaml(p)) == p.
std::string pipeline_to_yaml(const PipelineConfig& config);

}  // namespace simcr
