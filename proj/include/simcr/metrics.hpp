// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "simcr/vocab.hpp"

namespace simcr {

struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  double brevity_penalty = 0.0;
  /// In [0, 100].
  double bleu = 0.0;
};

/// Corpus BLEU-4 over token ids with clipped n-gram counts and brevity
/// penalty exp(min(0, 1 - ref_len / hyp_len)). Any zero precision gives 0.
BleuStats corpus_bleu_stats(const std::vector<std::vector<int>>& hyps,
                            const std::vector<std::vector<int>>& refs);
double corpus_bleu(const std::vector<std::vector<int>>& hyps,
                   const std::vector<std::vector<int>>& refs);

struct SimSearch {
  double speech_to_text = 0.0;
  double text_to_speech = 0.0;
  double mean = 0.0;
};

/// Cosine nearest-neighbour retrieval between index-paired speech and text
/// vectors in both directions. Equal similarities resolve to the lowest index.
SimSearch simsearch(const std::vector<std::vector<double>>& speech,
                    const std::vector<std::vector<double>>& text);
double simsearch_accuracy(const std::vector<std::vector<double>>& speech,
                          const std::vector<std::vector<double>>& text);

/// Fraction of output tokens that belong to `lang`, ignoring eos. Returns 0
/// when there are no tokens.
double vocab_rate(const std::vector<std::vector<int>>& outputs, const Vocab& vocab,
                  Lang lang);

}  // namespace simcr
