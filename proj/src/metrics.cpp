// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include "simcr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace simcr {

namespace {

using NgramCounts = std::map<std::vector<int>, std::size_t>;

NgramCounts ngrams(const std::vector<int>& tokens, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<int>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                              tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double accuracy(const std::vector<std::vector<double>>& queries,
                const std::vector<std::vector<double>>& keys,
                const std::vector<double>& query_norms,
                const std::vector<double>& key_norms) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t j = 0; j < keys.size(); ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < queries[i].size(); ++k) dot += queries[i][k] * keys[j][k];
      const double sim = dot / (query_norms[i] * key_norms[j]);
      if (sim > best_sim) {
        best_sim = sim;
        best = j;
      }
    }
    hits += best == i;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

}  // namespace

BleuStats corpus_bleu_stats(const std::vector<std::vector<int>>& hyps,
                            const std::vector<std::vector<int>>& refs) {
  if (hyps.empty()) throw std::invalid_argument("corpus_bleu: empty hypothesis list");
  if (hyps.size() != refs.size()) {
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hyps.size()) +
                                " hypotheses for " + std::to_string(refs.size()) +
                                " references");
  }
  BleuStats s;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    s.hyp_len += hyps[i].size();
    s.ref_len += refs[i].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const NgramCounts h = ngrams(hyps[i], n);
      const NgramCounts r = ngrams(refs[i], n);
      for (const auto& [gram, count] : h) {
        s.totals[n - 1] += count;
        auto it = r.find(gram);
        if (it != r.end()) s.matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (s.ref_len == 0) throw std::invalid_argument("corpus_bleu: empty references");
  if (s.hyp_len == 0) return s;
  s.brevity_penalty = std::exp(std::min(
      0.0, 1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len)));
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (s.matches[n] == 0) return s;
    log_sum += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
  }
  s.bleu = 100.0 * s.brevity_penalty * std::exp(log_sum / 4.0);
  return s;
}

double corpus_bleu(const std::vector<std::vector<int>>& hyps,
                   const std::vector<std::vector<int>>& refs) {
  return corpus_bleu_stats(hyps, refs).bleu;
}

SimSearch simsearch(const std::vector<std::vector<double>>& speech,
                    const std::vector<std::vector<double>>& text) {
  if (speech.size() != text.size()) {
    throw std::invalid_argument("simsearch: " + std::to_string(speech.size()) +
                                " speech vectors for " + std::to_string(text.size()) +
                                " text vectors");
  }
  if (speech.size() < 2) throw std::invalid_argument("simsearch: needs at least 2 pairs");
  const std::size_t dim = speech.front().size();
  std::vector<double> speech_norms, text_norms;
  for (std::size_t i = 0; i < speech.size(); ++i) {
    if (speech[i].size() != dim || text[i].size() != dim) {
      throw std::invalid_argument("simsearch: vectors differ in dimension");
    }
    speech_norms.push_back(norm(speech[i]));
    text_norms.push_back(norm(text[i]));
    if (speech_norms.back() == 0.0 || text_norms.back() == 0.0) {
      throw std::invalid_argument("simsearch: zero-norm vector at index " +
                                  std::to_string(i));
    }
  }
  SimSearch r;
  r.speech_to_text = accuracy(speech, text, speech_norms, text_norms);
  r.text_to_speech = accuracy(text, speech, text_norms, speech_norms);
  r.mean = 0.5 * (r.speech_to_text + r.text_to_speech);
  return r;
}

double simsearch_accuracy(const std::vector<std::vector<double>>& speech,
                          const std::vector<std::vector<double>>& text) {
  return simsearch(speech, text).mean;
}

double vocab_rate(const std::vector<std::vector<int>>& outputs, const Vocab& vocab,
                  Lang lang) {
  std::size_t total = 0, hits = 0;
  for (const auto& seq : outputs) {
    for (int id : seq) {
      if (id == Vocab::kEos) continue;
      ++total;
      hits += lang == Lang::Source ? vocab.is_src(id) : vocab.is_tgt(id);
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace simcr
