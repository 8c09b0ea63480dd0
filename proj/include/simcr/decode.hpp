// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "simcr/model.hpp"
#include "simcr/vocab.hpp"

namespace simcr {

struct DecodeConfig {
  std::size_t beam_size = 5;
  double length_penalty = 1.0;
  /// Output cap: max_len_factor * source length + max_len_extra tokens.
  double max_len_factor = 2.0;
  std::size_t max_len_extra = 10;
  int lang_tag = Vocab::kTgtTag;

  void validate() const;
  /// Beam 8 with length penalty 1.2.
  static DecodeConfig paper_preset();
};

/// `tokens` excludes the start tag and ends with eos.
struct Hypothesis {
  std::vector<int> tokens;
  double log_prob = 0.0;
  /// log_prob / len(tokens)^length_penalty.
  double normalized_score = 0.0;
};

/// Next-token log-probabilities for each prefix (each starting with the tag).
using StepScorer = std::function<std::vector<std::vector<double>>(
    const std::vector<std::vector<int>>& prefixes)>;

struct SearchSpace {
  int start = Vocab::kTgtTag;
  int eos = Vocab::kEos;
  /// Generated tokens including the final eos; eos is forced at this length.
  std::size_t max_len = 32;
  /// Ids never generated.
  std::vector<int> banned;
};

/// Finished hypotheses, best first. Each step keeps the top 2*beam
/// candidates; an eos candidate finishes a hypothesis only when it ranks
/// within the top beam. Search stops once beam hypotheses have finished.
/// Equal scores prefer the lower token id.
std::vector<Hypothesis> beam_search_nbest(const StepScorer& scorer,
                                          const SearchSpace& space,
                                          std::size_t beam_size,
                                          double length_penalty);
Hypothesis beam_search(const StepScorer& scorer, const SearchSpace& space,
                       std::size_t beam_size, double length_penalty);
Hypothesis greedy_search(const StepScorer& scorer, const SearchSpace& space,
                         double length_penalty);

/// Search space for a model output given the encoded source length.
SearchSpace model_search_space(const Seq2Seq& model, const DecodeConfig& config,
                               std::size_t source_length);

/// Decodes one encoded source (enc.batch() == 1).
Hypothesis decode(const Seq2Seq& model, const EncoderOutput& enc,
                  const DecodeConfig& config, bool greedy = false);

/// Output tokens with the final eos removed.
std::vector<int> strip_eos(const std::vector<int>& tokens);

}  // namespace simcr
