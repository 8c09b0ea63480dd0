// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "simcr/frames.hpp"
#include "simcr/rng.hpp"
#include "simcr/vocab.hpp"

namespace simcr {

/// Parameters of the synthetic speech/transcription/translation task.
///
/// Source sentences are uniform over the source vocabulary and the length
/// range. The translation maps each source token through a fixed bijection
/// onto the target vocabulary and then swaps adjacent pairs. Speech renders
/// every token as a few noisy copies of a per-token prototype frame.
struct TaskSpec {
  std::size_t src_vocab_size = 64;
  std::size_t tgt_vocab_size = 64;
  std::size_t min_len = 4;
  std::size_t max_len = 12;
  std::size_t frame_dim = 16;
  std::size_t min_repeat = 2;
  std::size_t max_repeat = 4;
  double jitter_std = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
  Vocab vocab() const { return {src_vocab_size, tgt_vocab_size}; }
  bool operator==(const TaskSpec&) const = default;
};

struct SplitSizes {
  std::size_t train = 8000;
  std::size_t valid = 500;
  std::size_t test = 500;
  /// Text-only MT pairs standing in for an external MT corpus.
  std::size_t external = 16000;
  bool operator==(const SplitSizes&) const = default;
};

/// One corpus item. Items of the external split carry no frames.
struct Triple {
  FrameMatrix frames;
  std::vector<int> src;
  std::vector<int> tgt;

  bool has_speech() const { return frames.rows > 0; }
  bool operator==(const Triple&) const = default;
};

struct Corpus {
  TaskSpec spec;
  std::vector<Triple> train;
  std::vector<Triple> valid;
  std::vector<Triple> test;
  std::vector<Triple> external;

  /// "train", "valid", "test" or "external".
  const std::vector<Triple>& split(std::string_view name) const;
  std::vector<Triple>& split(std::string_view name);
  static std::vector<std::string> split_names();
  bool operator==(const Corpus&) const = default;
};

/// The deterministic source->target rule of a TaskSpec.
class TranslationRule {
 public:
  explicit TranslationRule(const TaskSpec& spec);
  std::vector<int> translate(const std::vector<int>& src) const;
  std::vector<int> invert(const std::vector<int>& tgt) const;

 private:
  Vocab vocab_;
  std::vector<std::size_t> forward_;  // source index -> target index
  std::vector<std::size_t> inverse_;
};

/// Per-token prototype frames, one row per source token, from the spec seed.
FrameMatrix speech_prototypes(const TaskSpec& spec);

FrameMatrix render_speech(const std::vector<int>& src, const TaskSpec& spec,
                          const FrameMatrix& prototypes, Rng& rng);

Corpus generate_corpus(const TaskSpec& spec, const SplitSizes& sizes);

struct FilterConfig {
  std::size_t min_frames = 4;
  std::size_t max_frames = 200;
  double max_len_ratio = 1.5;
};

/// Drops items outside [min_frames, max_frames] (speech items only) and pairs
/// whose length ratio exceeds max_len_ratio. Throws if nothing survives.
std::vector<Triple> filter_pairs(const std::vector<Triple>& items,
                                 const FilterConfig& config);
/// Filters the training splits (train and external).
Corpus filter_corpus(const Corpus& corpus, const FilterConfig& config);

enum class BatchModality { Text, Speech };

/// Padded cost of an item under the modality's budget: frames for speech,
/// tokens (longest of source and tag-prefixed target) for text.
std::size_t item_cost(const Triple& item, BatchModality modality);

/// Length-bucketed batches under a padded-size budget. Every epoch shuffles
/// the items with a per-epoch seed, stable-sorts them by cost, fills batches
/// greedily, and shuffles the batch order.
class BatchIterator {
 public:
  BatchIterator(std::vector<const Triple*> items, BatchModality modality,
                std::size_t budget, std::uint64_t shuffle_seed);

  /// Batches of one epoch as indices into the item list.
  std::vector<std::vector<std::size_t>> epoch_batches(std::uint64_t epoch) const;

  /// The `counter`-th batch of the endless epoch stream.
  std::vector<const Triple*> batch_at(std::uint64_t counter);

  std::size_t size() const { return items_.size(); }

 private:
  std::vector<const Triple*> items_;
  BatchModality modality_;
  std::size_t budget_;
  std::uint64_t seed_;
  // Cache for sequential access.
  std::uint64_t cached_epoch_ = 0;
  std::uint64_t cached_first_ = 0;
  std::vector<std::vector<std::size_t>> cached_;
  bool has_cache_ = false;
};

std::vector<const Triple*> pointers(const std::vector<Triple>& items);

class CorpusFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
/// Any structural problem throws CorpusFormatError naming the line. When
/// `expected` is given, manifest differences are appended to `warnings`.
Corpus load_corpus(const std::filesystem::path& path,
                   const TaskSpec* expected = nullptr,
                   std::vector<std::string>* warnings = nullptr);

/// Stable digest of the corpus contents.
std::uint64_t corpus_hash(const Corpus& corpus);

}  // namespace simcr
