// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include "simcr/runtime.hpp"

#if __has_include(<malloc.h>)
#include <malloc.h>
#endif

namespace simcr {

void configure_allocator() {
#if defined(M_TOP_PAD)
  mallopt(M_TOP_PAD, 256 * 1024 * 1024);
#endif
}

}  // namespace simcr
