// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "simcr/autodiff.hpp"

namespace simcr {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

/// Per-parameter first/second moments, zero-initialized.
struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step_count = 0;

  static AdamState for_params(std::span<const ad::Tensor> params);
};

/// One bias-corrected Adam update using each parameter's accumulated grad
/// (missing grads count as zero). Increments state.step_count.
void adam_step(std::span<ad::Tensor> params, AdamState& state, double lr,
               const AdamConfig& config = {});

/// Linear warmup to `peak` over `warmup` steps, then peak * sqrt(warmup/step).
double lr_inverse_sqrt(std::uint64_t step, std::uint64_t warmup, double peak);

}  // namespace simcr
