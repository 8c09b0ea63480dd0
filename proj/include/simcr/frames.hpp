// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace simcr {

/// Row-major [rows x cols] block of speech features (one row per frame).
struct FrameMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols, cols);
  }
  bool operator==(const FrameMatrix&) const = default;
};

}  // namespace simcr
