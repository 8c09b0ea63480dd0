// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "simcr/corpus.hpp"
#include "simcr/decode.hpp"
#include "simcr/losses.hpp"
#include "simcr/metrics.hpp"
#include "simcr/model.hpp"

namespace simcr {

/// Max-pooled encoder outputs of paired speech and transcripts.
struct Representations {
  std::vector<std::vector<double>> speech;
  std::vector<std::vector<double>> text;
};

Representations collect_representations(const Seq2Seq& model,
                                        const std::vector<Triple>& items,
                                        std::size_t chunk = 64);

struct Projection {
  std::vector<std::array<double, 2>> points;
  /// Covariance eigenvalues, largest first (population normalization).
  std::vector<double> eigenvalues;
  std::array<std::vector<double>, 2> components;
  std::vector<double> mean;
};

/// Centers the rows and projects them onto the top two covariance
/// eigenvectors. Each component's largest-magnitude entry is made positive.
Projection pca_2d(const std::vector<std::vector<double>>& rows);

/// CSV rows `index,modality,pc1,pc2,v0..v{d-1}`, speech rows then text rows.
void export_representations(const Representations& reps,
                            const std::filesystem::path& path);

struct SampleDecode {
  std::string reference;
  std::string hypothesis;
};

struct EvalReport {
  std::string checkpoint;
  std::string task;
  std::string tag;
  std::size_t beam_size = 0;
  double length_penalty = 0.0;
  bool greedy = false;
  std::size_t sentences = 0;
  double bleu = 0.0;
  BleuStats bleu_stats;
  std::size_t output_tokens = 0;
  double src_vocab_rate = 0.0;
  double tgt_vocab_rate = 0.0;
  std::optional<SimSearch> simsearch;
  std::string representation_source;
  std::vector<SampleDecode> samples;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  std::string to_text() const;
  bool operator==(const EvalReport& other) const { return to_json() == other.to_json(); }
};

struct EvalOptions {
  DecodeConfig decode;
  bool greedy = false;
  std::size_t samples = 5;
  /// Adds the similarity-search accuracy on the same items.
  bool diagnostics = false;
  std::string checkpoint_label;
};

/// Decodes `items` for `task` (ST: speech -> tag, ASR: speech -> tag, MT:
/// source text -> tag) and scores against the task's reference side.
EvalReport evaluate(const Seq2Seq& model, const std::vector<Triple>& items, Task task,
                    const EvalOptions& options);

/// Decoded outputs with eos removed, in item order.
std::vector<std::vector<int>> decode_items(const Seq2Seq& model,
                                           const std::vector<Triple>& items, Task task,
                                           const DecodeConfig& config, bool greedy);

struct ScatterPoint {
  std::string label;
  double x = 0.0;
  double y = 0.0;
};

/// Standalone SVG scatter with axes over [x_min, x_max] x [y_min, y_max].
std::string scatter_svg(const std::vector<ScatterPoint>& points, const std::string& title,
                        const std::string& x_label, const std::string& y_label,
                        double x_min = 0.0, double x_max = 1.0, double y_min = 0.0,
                        double y_max = 100.0);

}  // namespace simcr
