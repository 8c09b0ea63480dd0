// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

namespace simcr {

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS between training steps. Call once at program start.
void configure_allocator();

}  // namespace simcr
