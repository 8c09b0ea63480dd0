// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "simcr/autodiff.hpp"
#include "simcr/corpus.hpp"
#include "simcr/model.hpp"
#include "simcr/rng.hpp"

namespace simcr {

enum class Task { MT, ASR, ST };

std::string_view task_name(Task task);
std::optional<Task> parse_task(std::string_view name);

/// Which directed cross-modal term a positive beta enables.
///   mt-st: KL(f(x,y) || f(s,y)), attached to ST batches
///   asr:   KL(f(s,x) || f(x,x)), attached to ASR batches
///   text:  KL(f(x,y) || f(y,y)), attached to MT batches
///   auto:  mt-st for ST batches, asr for ASR batches
enum class CrossKind { Auto, MtSt, Asr, Text };

std::string_view cross_kind_name(CrossKind kind);
std::optional<CrossKind> parse_cross_kind(std::string_view name);

struct ConsistencyConfig {
  double alpha = 0.0;
  double beta = 0.0;
  double label_smoothing = 0.1;
  CrossKind cross = CrossKind::Auto;
  /// Stop gradients through the text-side pass of the cross term.
  bool frozen_teacher = false;

  void validate() const;
};

struct LossParts {
  double ce = 0.0;
  double intra = 0.0;
  double cross = 0.0;
  double total = 0.0;
  std::size_t token_count = 0;
};

struct CeResult {
  ad::Tensor loss;
  std::size_t token_count = 0;
};

/// Label-smoothed cross-entropy, q = (1-eps)*onehot + eps/V, averaged over
/// rows with valid != 0.
CeResult ce_label_smooth(const ad::Tensor& logp, std::span<const int> targets,
                         std::span<const std::uint8_t> valid, double eps);

/// Directed KL(ref || other) per row, averaged over valid rows.
ad::Tensor crosskl(const ad::Tensor& logp_ref, const ad::Tensor& logp_other,
                   std::span<const std::uint8_t> valid);

/// (KL(a||b) + KL(b||a)) / 2 per row, averaged over valid rows.
ad::Tensor bikl(const ad::Tensor& logp_a, const ad::Tensor& logp_b,
                std::span<const std::uint8_t> valid);

/// One task applied to a batch of corpus items.
struct TaskBatch {
  Task task;
  std::vector<const Triple*> items;
};

struct Objective {
  ad::Tensor total;
  LossParts parts;
};

/// Sum over task batches of CE (averaged over both passes when alpha > 0)
/// + alpha * biKL between two dropout passes + beta * the configured cross
/// term. Each pass draws its dropout masks from its own fork of `rng`.
Objective composite_objective(const Seq2Seq& model,
                              std::span<const TaskBatch> batches,
                              const ConsistencyConfig& config, Rng& rng);

}  // namespace simcr
