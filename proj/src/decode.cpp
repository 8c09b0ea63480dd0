// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include "simcr/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace simcr {

void DecodeConfig::validate() const {
  if (beam_size < 1) throw std::invalid_argument("beam_size must be >= 1");
  if (!(length_penalty >= 0.0)) throw std::invalid_argument("length_penalty must be >= 0");
  if (!(max_len_factor >= 0.0)) throw std::invalid_argument("max_len_factor must be >= 0");
}

DecodeConfig DecodeConfig::paper_preset() {
  DecodeConfig c;
  c.beam_size = 8;
  c.length_penalty = 1.2;
  return c;
}

namespace {

double normalize(double log_prob, std::size_t len, double length_penalty) {
  if (length_penalty == 0.0) return log_prob;
  return log_prob / std::pow(static_cast<double>(len), length_penalty);
}

struct Partial {
  std::vector<int> tokens;
  double log_prob = 0.0;
};

struct Candidate {
  double score;
  int token;
  std::size_t parent;
};

void check_space(const SearchSpace& space) {
  if (space.max_len < 1) throw std::invalid_argument("search: max_len must be >= 1");
  if (std::find(space.banned.begin(), space.banned.end(), space.eos) != space.banned.end()) {
    throw std::invalid_argument("search: eos cannot be banned");
  }
}

std::vector<std::vector<double>> score(const StepScorer& scorer,
                                       const std::vector<Partial>& active, int start) {
  std::vector<std::vector<int>> prefixes;
  prefixes.reserve(active.size());
  for (const Partial& p : active) {
    std::vector<int> prefix{start};
    prefix.insert(prefix.end(), p.tokens.begin(), p.tokens.end());
    prefixes.push_back(std::move(prefix));
  }
  auto out = scorer(prefixes);
  if (out.size() != active.size()) {
    throw std::logic_error("search: scorer returned " + std::to_string(out.size()) +
                           " rows for " + std::to_string(active.size()) + " prefixes");
  }
  return out;
}

bool allowed(const SearchSpace& space, int token) {
  return std::find(space.banned.begin(), space.banned.end(), token) == space.banned.end();
}

}  // namespace

std::vector<Hypothesis> beam_search_nbest(const StepScorer& scorer,
                                          const SearchSpace& space,
                                          std::size_t beam_size,
                                          double length_penalty) {
  if (beam_size < 1) throw std::invalid_argument("beam_size must be >= 1");
  if (!(length_penalty >= 0.0)) throw std::invalid_argument("length_penalty must be >= 0");
  check_space(space);
  std::vector<Partial> active(1);
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < space.max_len && !active.empty(); ++step) {
    const bool last = step + 1 == space.max_len;
    const auto logp = score(scorer, active, space.start);
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < active.size(); ++i) {
      if (space.eos < 0 || static_cast<std::size_t>(space.eos) >= logp[i].size()) {
        throw std::out_of_range("search: eos id outside the scorer vocabulary");
      }
      if (last) {
        cands.push_back({active[i].log_prob + logp[i][space.eos], space.eos, i});
        continue;
      }
      for (std::size_t v = 0; v < logp[i].size(); ++v) {
        const int token = static_cast<int>(v);
        if (allowed(space, token)) cands.push_back({active[i].log_prob + logp[i][v], token, i});
      }
    }
    const std::size_t keep = std::min(cands.size(), 2 * beam_size);
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.token != b.token) return a.token < b.token;
                        return a.parent < b.parent;
                      });
    std::vector<Partial> next;
    for (std::size_t r = 0; r < keep; ++r) {
      const Candidate& c = cands[r];
      std::vector<int> tokens = active[c.parent].tokens;
      tokens.push_back(c.token);
      if (c.token == space.eos) {
        if (r < beam_size) {
          const std::size_t len = tokens.size();
          finished.push_back({std::move(tokens), c.score,
                              normalize(c.score, len, length_penalty)});
        }
      } else if (next.size() < beam_size) {
        next.push_back({std::move(tokens), c.score});
      }
    }
    if (finished.size() >= beam_size) break;
    active = std::move(next);
  }
  std::stable_sort(finished.begin(), finished.end(),
                   [](const Hypothesis& a, const Hypothesis& b) {
                     return a.normalized_score > b.normalized_score;
                   });
  return finished;
}

Hypothesis beam_search(const StepScorer& scorer, const SearchSpace& space,
                       std::size_t beam_size, double length_penalty) {
  auto nbest = beam_search_nbest(scorer, space, beam_size, length_penalty);
  if (nbest.empty()) throw std::logic_error("beam_search: no finished hypothesis");
  return std::move(nbest.front());
}

Hypothesis greedy_search(const StepScorer& scorer, const SearchSpace& space,
                         double length_penalty) {
  if (!(length_penalty >= 0.0)) throw std::invalid_argument("length_penalty must be >= 0");
  check_space(space);
  std::vector<Partial> active(1);
  for (std::size_t step = 0; step < space.max_len; ++step) {
    const auto logp = score(scorer, active, space.start).front();
    int best = space.eos;
    if (step + 1 < space.max_len) {
      double best_score = -std::numeric_limits<double>::infinity();
      best = -1;
      for (std::size_t v = 0; v < logp.size(); ++v) {
        const int token = static_cast<int>(v);
        if (allowed(space, token) && (best < 0 || logp[v] > best_score)) {
          best = token;
          best_score = logp[v];
        }
      }
    }
    if (best < 0 || static_cast<std::size_t>(best) >= logp.size()) {
      throw std::out_of_range("greedy_search: no admissible token");
    }
    active[0].tokens.push_back(best);
    active[0].log_prob += logp[static_cast<std::size_t>(best)];
    if (best == space.eos) break;
  }
  Hypothesis h{active[0].tokens, active[0].log_prob, 0.0};
  h.normalized_score = normalize(h.log_prob, h.tokens.size(), length_penalty);
  return h;
}

SearchSpace model_search_space(const Seq2Seq& model, const DecodeConfig& config,
                               std::size_t source_length) {
  config.validate();
  if (config.lang_tag != Vocab::kSrcTag && config.lang_tag != Vocab::kTgtTag) {
    throw std::invalid_argument("decode: unknown language tag id " +
                                std::to_string(config.lang_tag));
  }
  SearchSpace space;
  space.start = config.lang_tag;
  space.eos = Vocab::kEos;
  const auto cap = static_cast<std::size_t>(
      std::ceil(config.max_len_factor * static_cast<double>(source_length)));
  space.max_len = std::max<std::size_t>(
      1, std::min(cap + config.max_len_extra, model.config().max_positions - 1));
  space.banned = {Vocab::kPad, Vocab::kBos, Vocab::kSrcTag, Vocab::kTgtTag};
  return space;
}

Hypothesis decode(const Seq2Seq& model, const EncoderOutput& enc,
                  const DecodeConfig& config, bool greedy) {
  if (enc.batch() != 1) throw std::invalid_argument("decode: expects a single source");
  const SearchSpace space = model_search_space(model, config, enc.lengths[0]);
  const StepScorer scorer = [&](const std::vector<std::vector<int>>& prefixes) {
    return model.next_token_logp(enc, prefixes);
  };
  if (greedy) return greedy_search(scorer, space, config.length_penalty);
  return beam_search(scorer, space, config.beam_size, config.length_penalty);
}

std::vector<int> strip_eos(const std::vector<int>& tokens) {
  std::vector<int> out = tokens;
  if (!out.empty() && out.back() == Vocab::kEos) out.pop_back();
  return out;
}

}  // namespace simcr
