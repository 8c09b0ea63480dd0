// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include "simcr/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace simcr {

AdamState AdamState::for_params(std::span<const ad::Tensor> params) {
  AdamState state;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.numel(), 0.0);
    state.second_moment.emplace_back(p.numel(), 0.0);
  }
  return state;
}

void adam_step(std::span<ad::Tensor> params, AdamState& state, double lr,
               const AdamConfig& config) {
  if (!(lr >= 0.0)) throw std::invalid_argument("adam_step: negative lr");
  if (state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ad::ShapeError("adam_step: optimizer state holds " +
                         std::to_string(state.first_moment.size()) +
                         " slots for " + std::to_string(params.size()) +
                         " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel() ||
        state.second_moment[i].size() != params[i].numel()) {
      throw ad::ShapeError("adam_step: moment size mismatch for parameter " +
                           std::to_string(i) + " of shape " +
                           ad::shape_str(params[i].shape()));
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const bool has_grad = params[i].has_grad();
    const auto g = has_grad ? params[i].mutable_grad() : std::span<double>{};
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has_grad ? g[j] : 0.0;
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

double lr_inverse_sqrt(std::uint64_t step, std::uint64_t warmup, double peak) {
  if (step == 0 || warmup == 0) {
    throw std::invalid_argument("lr_inverse_sqrt: step and warmup must be >= 1");
  }
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  if (step <= warmup) return peak * s / w;
  return peak * std::sqrt(w / s);
}

}  // namespace simcr
