// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include "simcr/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace simcr {

namespace {

[[noreturn]] void spec_fail(const std::string& what) {
  throw std::invalid_argument("TaskSpec: " + what);
}

// Number of distinct sentences the spec can produce, saturating at `cap`.
std::size_t sentence_capacity(const TaskSpec& spec, std::size_t cap) {
  std::size_t total = 0;
  for (std::size_t len = spec.min_len; len <= spec.max_len; ++len) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < len && n < cap; ++i) n *= spec.src_vocab_size;
    total += std::min(n, cap);
    if (total >= cap) return cap;
  }
  return total;
}

}  // namespace

void TaskSpec::validate() const {
  if (src_vocab_size == 0 || tgt_vocab_size == 0) spec_fail("empty vocabulary");
  if (src_vocab_size != tgt_vocab_size) {
    spec_fail("the token bijection needs src_vocab_size == tgt_vocab_size");
  }
  if (min_len == 0 || min_len > max_len) spec_fail("invalid sentence length range");
  if (frame_dim == 0) spec_fail("frame_dim must be positive");
  if (min_repeat == 0 || min_repeat > max_repeat) spec_fail("invalid repeat range");
  if (!(jitter_std >= 0.0) || !std::isfinite(jitter_std)) {
    spec_fail("jitter_std must be finite and >= 0");
  }
}

const std::vector<Triple>& Corpus::split(std::string_view name) const {
  return const_cast<Corpus*>(this)->split(name);
}

std::vector<Triple>& Corpus::split(std::string_view name) {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  if (name == "external") return external;
  throw std::invalid_argument("unknown corpus split '" + std::string(name) + "'");
}

std::vector<std::string> Corpus::split_names() {
  return {"train", "valid", "test", "external"};
}

// ---------------------------------------------------------------------------

TranslationRule::TranslationRule(const TaskSpec& spec) : vocab_(spec.vocab()) {
  spec.validate();
  forward_.resize(spec.src_vocab_size);
  std::iota(forward_.begin(), forward_.end(), std::size_t{0});
  Rng rng(derive_seed(spec.seed, "translation_rule"));
  std::shuffle(forward_.begin(), forward_.end(), rng.engine());
  inverse_.resize(forward_.size());
  for (std::size_t i = 0; i < forward_.size(); ++i) inverse_[forward_[i]] = i;
}

std::vector<int> TranslationRule::translate(const std::vector<int>& src) const {
  std::vector<int> out;
  out.reserve(src.size());
  for (int id : src) {
    if (!vocab_.is_src(id)) {
      throw std::invalid_argument("translate: token " + std::to_string(id) +
                                  " is not a source token");
    }
    out.push_back(vocab_.tgt_token(
        forward_[static_cast<std::size_t>(id - Vocab::kFirstWord)]));
  }
  for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
  return out;
}

std::vector<int> TranslationRule::invert(const std::vector<int>& tgt) const {
  std::vector<int> out = tgt;
  for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
  const int first_tgt = vocab_.tgt_token(0);
  for (int& id : out) {
    if (!vocab_.is_tgt(id)) {
      throw std::invalid_argument("invert: token " + std::to_string(id) +
                                  " is not a target token");
    }
    id = vocab_.src_token(inverse_[static_cast<std::size_t>(id - first_tgt)]);
  }
  return out;
}

FrameMatrix speech_prototypes(const TaskSpec& spec) {
  Rng rng(derive_seed(spec.seed, "speech_prototypes"));
  FrameMatrix p{spec.src_vocab_size, spec.frame_dim, {}};
  p.values.resize(p.rows * p.cols);
  for (double& v : p.values) v = rng.normal();
  return p;
}

FrameMatrix render_speech(const std::vector<int>& src, const TaskSpec& spec,
                          const FrameMatrix& prototypes, Rng& rng) {
  const Vocab vocab = spec.vocab();
  FrameMatrix out{0, spec.frame_dim, {}};
  for (int id : src) {
    if (!vocab.is_src(id)) {
      throw std::invalid_argument("render_speech: token " + std::to_string(id) +
                                  " is not a source token");
    }
    const auto proto = prototypes.row(static_cast<std::size_t>(id - Vocab::kFirstWord));
    const auto repeats = static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(spec.min_repeat),
        static_cast<std::int64_t>(spec.max_repeat)));
    for (std::size_t r = 0; r < repeats; ++r) {
      for (double v : proto) {
        out.values.push_back(spec.jitter_std > 0.0 ? v + rng.normal(0.0, spec.jitter_std)
                                                   : v);
      }
      ++out.rows;
    }
  }
  return out;
}

Corpus generate_corpus(const TaskSpec& spec, const SplitSizes& sizes) {
  spec.validate();
  if (sizes.train == 0 || sizes.valid == 0 || sizes.test == 0) {
    throw std::invalid_argument("generate_corpus: train/valid/test sizes must be >= 1");
  }
  const std::size_t requested = sizes.train + sizes.valid + sizes.test + sizes.external;
  // Rejection sampling needs head room; refuse requests near the capacity.
  if (sentence_capacity(spec, 2 * requested) < 2 * requested) {
    throw std::invalid_argument(
        "generate_corpus: vocabulary too small for " + std::to_string(requested) +
        " distinct sentences");
  }
  const Vocab vocab = spec.vocab();
  const TranslationRule rule(spec);
  const FrameMatrix prototypes = speech_prototypes(spec);
  Corpus corpus;
  corpus.spec = spec;
  std::set<std::vector<int>> seen;

  auto fill = [&](std::vector<Triple>& out, std::string_view name, std::size_t count,
                  bool speech) {
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t item_seed =
          derive_seed(derive_seed(spec.seed, name), static_cast<std::uint64_t>(i));
      std::vector<int> src;
      for (std::uint64_t attempt = 0;; ++attempt) {
        if (attempt == 1000) {
          throw std::runtime_error("generate_corpus: could not draw a new distinct sentence");
        }
        Rng rng(derive_seed(item_seed, attempt));
        const auto len = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(spec.min_len),
                            static_cast<std::int64_t>(spec.max_len)));
        src.clear();
        for (std::size_t t = 0; t < len; ++t) {
          src.push_back(vocab.src_token(static_cast<std::size_t>(rng.uniform_int(
              0, static_cast<std::int64_t>(spec.src_vocab_size) - 1))));
        }
        if (seen.insert(src).second) break;
      }
      Triple t;
      t.tgt = rule.translate(src);
      if (speech) {
        Rng render_rng(derive_seed(item_seed, "render"));
        t.frames = render_speech(src, spec, prototypes, render_rng);
      } else {
        t.frames.cols = spec.frame_dim;
      }
      t.src = std::move(src);
      out.push_back(std::move(t));
    }
  };
  // Evaluation splits first so they do not depend on the training sizes.
  fill(corpus.test, "test", sizes.test, true);
  fill(corpus.valid, "valid", sizes.valid, true);
  fill(corpus.train, "train", sizes.train, true);
  fill(corpus.external, "external", sizes.external, false);
  return corpus;
}

// ---------------------------------------------------------------------------

std::vector<Triple> filter_pairs(const std::vector<Triple>& items,
                                 const FilterConfig& config) {
  if (config.min_frames == 0 || config.max_frames == 0 || !(config.max_len_ratio > 0.0)) {
    throw std::invalid_argument("filter_pairs: thresholds must be positive");
  }
  std::vector<Triple> kept;
  for (const Triple& t : items) {
    if (t.has_speech() &&
        (t.frames.rows < config.min_frames || t.frames.rows > config.max_frames)) {
      continue;
    }
    const double a = static_cast<double>(t.src.size());
    const double b = static_cast<double>(t.tgt.size());
    if (std::min(a, b) == 0.0 || std::max(a, b) / std::min(a, b) > config.max_len_ratio) {
      continue;
    }
    kept.push_back(t);
  }
  if (kept.empty() && !items.empty()) {
    throw std::runtime_error("filter_pairs: every item was filtered out");
  }
  return kept;
}

Corpus filter_corpus(const Corpus& corpus, const FilterConfig& config) {
  Corpus out = corpus;
  out.train = filter_pairs(corpus.train, config);
  out.external = filter_pairs(corpus.external, config);
  return out;
}

// ---------------------------------------------------------------------------

std::size_t item_cost(const Triple& item, BatchModality modality) {
  if (modality == BatchModality::Speech) return item.frames.rows;
  return std::max(item.src.size(), item.tgt.size() + 1);
}

BatchIterator::BatchIterator(std::vector<const Triple*> items, BatchModality modality,
                             std::size_t budget, std::uint64_t shuffle_seed)
    : items_(std::move(items)), modality_(modality), budget_(budget), seed_(shuffle_seed) {
  if (items_.empty()) throw std::invalid_argument("BatchIterator: no items");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const std::size_t cost = item_cost(*items_[i], modality_);
    if (modality_ == BatchModality::Speech && !items_[i]->has_speech()) {
      throw std::invalid_argument("BatchIterator: item " + std::to_string(i) +
                                  " has no speech for a speech batch");
    }
    if (cost > budget_) {
      throw std::invalid_argument("BatchIterator: item " + std::to_string(i) +
                                  " has cost " + std::to_string(cost) +
                                  " above the budget " + std::to_string(budget_));
    }
  }
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch_batches(
    std::uint64_t epoch) const {
  Rng rng(derive_seed(seed_, epoch));
  std::vector<std::size_t> order(items_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::size_t> cost(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) cost[i] = item_cost(*items_[i], modality_);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cost[a] < cost[b]; });
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  std::size_t longest = 0;
  for (std::size_t idx : order) {
    const std::size_t next_longest = std::max(longest, cost[idx]);
    if (!current.empty() && (current.size() + 1) * next_longest > budget_) {
      batches.push_back(std::move(current));
      current.clear();
      longest = 0;
    }
    current.push_back(idx);
    longest = std::max(longest, cost[idx]);
  }
  if (!current.empty()) batches.push_back(std::move(current));
  std::shuffle(batches.begin(), batches.end(), rng.engine());
  return batches;
}

std::vector<const Triple*> BatchIterator::batch_at(std::uint64_t counter) {
  if (!has_cache_ || counter < cached_first_) {
    cached_epoch_ = 0;
    cached_first_ = 0;
    cached_ = epoch_batches(0);
    has_cache_ = true;
  }
  while (counter >= cached_first_ + cached_.size()) {
    cached_first_ += cached_.size();
    cached_ = epoch_batches(++cached_epoch_);
  }
  std::vector<const Triple*> out;
  for (std::size_t idx : cached_[counter - cached_first_]) out.push_back(items_[idx]);
  return out;
}

std::vector<const Triple*> pointers(const std::vector<Triple>& items) {
  std::vector<const Triple*> out;
  out.reserve(items.size());
  for (const Triple& t : items) out.push_back(&t);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "simcr-corpus";
constexpr std::string_view kVersion = "v1";

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

[[noreturn]] void format_fail(std::size_t line, const std::string& what) {
  throw CorpusFormatError("corpus line " + std::to_string(line) + ": " + what);
}

template <class T>
T parse_number(std::string_view text, std::size_t line) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    format_fail(line, "bad number '" + std::string(text) + "'");
  }
  return value;
}

template <class T>
std::vector<T> parse_list(std::string_view text, std::size_t line) {
  std::vector<T> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t sp = text.find(' ', start);
    if (sp == std::string_view::npos) sp = text.size();
    out.push_back(parse_number<T>(text.substr(start, sp - start), line));
    start = sp + 1;
  }
  return out;
}

std::map<std::string, std::string> spec_fields(const TaskSpec& s) {
  return {{"src_vocab_size", std::to_string(s.src_vocab_size)},
          {"tgt_vocab_size", std::to_string(s.tgt_vocab_size)},
          {"min_len", std::to_string(s.min_len)},
          {"max_len", std::to_string(s.max_len)},
          {"frame_dim", std::to_string(s.frame_dim)},
          {"min_repeat", std::to_string(s.min_repeat)},
          {"max_repeat", std::to_string(s.max_repeat)},
          {"jitter_std", format_double(s.jitter_std)},
          {"seed", std::to_string(s.seed)}};
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_corpus: cannot open " + path.string());
  out << kMagic << '\t' << kVersion << '\n';
  out << "manifest";
  for (const auto& [k, v] : spec_fields(corpus.spec)) out << '\t' << k << '=' << v;
  std::size_t total = 0;
  for (const auto& name : Corpus::split_names()) {
    out << '\t' << name << '=' << corpus.split(name).size();
    total += corpus.split(name).size();
  }
  out << '\n';
  std::string line;
  for (const auto& name : Corpus::split_names()) {
    for (const Triple& t : corpus.split(name)) {
      line.clear();
      line += name;
      line += '\t';
      line += std::to_string(t.frames.rows);
      line += '\t';
      line += std::to_string(t.frames.cols);
      line += '\t';
      for (std::size_t i = 0; i < t.src.size(); ++i) {
        if (i) line += ' ';
        line += std::to_string(t.src[i]);
      }
      line += '\t';
      for (std::size_t i = 0; i < t.tgt.size(); ++i) {
        if (i) line += ' ';
        line += std::to_string(t.tgt[i]);
      }
      line += '\t';
      for (std::size_t i = 0; i < t.frames.values.size(); ++i) {
        if (i) line += ' ';
        line += format_double(t.frames.values[i]);
      }
      line += '\n';
      out << line;
    }
  }
  out << "end\t" << total << '\n';
  if (!out) throw std::runtime_error("save_corpus: write failed for " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path, const TaskSpec* expected,
                   std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_corpus: cannot open " + path.string());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) ||
      line != std::string(kMagic) + "\t" + std::string(kVersion)) {
    format_fail(lineno, "missing '" + std::string(kMagic) + "' header");
  }
  ++lineno;
  if (!std::getline(in, line)) format_fail(lineno, "missing manifest");
  auto fields = split_tabs(line);
  if (fields.empty() || fields[0] != "manifest") format_fail(lineno, "expected manifest record");
  std::map<std::string, std::string, std::less<>> kv;
  for (std::size_t i = 1; i < fields.size(); ++i) {
    const auto eq = fields[i].find('=');
    if (eq == std::string_view::npos) format_fail(lineno, "manifest field without '='");
    kv.emplace(std::string(fields[i].substr(0, eq)), std::string(fields[i].substr(eq + 1)));
  }
  auto need = [&](const std::string& key) -> std::string_view {
    auto it = kv.find(key);
    if (it == kv.end()) format_fail(lineno, "manifest lacks '" + key + "'");
    return it->second;
  };
  Corpus corpus;
  TaskSpec& s = corpus.spec;
  s.src_vocab_size = parse_number<std::size_t>(need("src_vocab_size"), lineno);
  s.tgt_vocab_size = parse_number<std::size_t>(need("tgt_vocab_size"), lineno);
  s.min_len = parse_number<std::size_t>(need("min_len"), lineno);
  s.max_len = parse_number<std::size_t>(need("max_len"), lineno);
  s.frame_dim = parse_number<std::size_t>(need("frame_dim"), lineno);
  s.min_repeat = parse_number<std::size_t>(need("min_repeat"), lineno);
  s.max_repeat = parse_number<std::size_t>(need("max_repeat"), lineno);
  s.jitter_std = parse_number<double>(need("jitter_std"), lineno);
  s.seed = parse_number<std::uint64_t>(need("seed"), lineno);
  std::map<std::string, std::size_t> declared;
  for (const auto& name : Corpus::split_names()) {
    declared[name] = parse_number<std::size_t>(need(name), lineno);
    corpus.split(name).reserve(declared[name]);
  }
  if (expected != nullptr && warnings != nullptr) {
    const auto want = spec_fields(*expected);
    const auto have = spec_fields(s);
    for (const auto& [k, v] : want) {
      if (have.at(k) != v) {
        warnings->push_back("manifest mismatch: " + k + " is " + have.at(k) +
                            " in file but " + v + " in spec");
      }
    }
  }
  bool ended = false;
  std::size_t records = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (ended) format_fail(lineno, "content after end record");
    fields = split_tabs(line);
    if (fields[0] == "end") {
      if (fields.size() != 2 || parse_number<std::size_t>(fields[1], lineno) != records) {
        format_fail(lineno, "end record does not match the record count");
      }
      ended = true;
      continue;
    }
    if (fields.size() != 6) format_fail(lineno, "expected 6 tab-separated fields");
    auto& dest = [&]() -> std::vector<Triple>& {
      try {
        return corpus.split(fields[0]);
      } catch (const std::invalid_argument&) {
        format_fail(lineno, "unknown split '" + std::string(fields[0]) + "'");
      }
    }();
    Triple t;
    t.frames.rows = parse_number<std::size_t>(fields[1], lineno);
    t.frames.cols = parse_number<std::size_t>(fields[2], lineno);
    t.src = parse_list<int>(fields[3], lineno);
    t.tgt = parse_list<int>(fields[4], lineno);
    t.frames.values = parse_list<double>(fields[5], lineno);
    if (t.frames.values.size() != t.frames.rows * t.frames.cols) {
      format_fail(lineno, "frame count does not match declared T x frame_dim");
    }
    if (t.frames.cols != s.frame_dim && t.frames.rows > 0) {
      format_fail(lineno, "frame_dim differs from the manifest");
    }
    dest.push_back(std::move(t));
    ++records;
  }
  if (!ended) format_fail(lineno, "truncated file: missing end record");
  for (const auto& name : Corpus::split_names()) {
    if (corpus.split(name).size() != declared[name]) {
      format_fail(lineno, "split '" + name + "' has " +
                              std::to_string(corpus.split(name).size()) +
                              " records, manifest declares " +
                              std::to_string(declared[name]));
    }
  }
  return corpus;
}

std::uint64_t corpus_hash(const Corpus& corpus) {
  std::uint64_t h = fnv1a("corpus");
  auto mix = [&](const void* p, std::size_t n) {
    h = fnv1a(std::string_view(static_cast<const char*>(p), n), h);
  };
  for (const auto& [k, v] : spec_fields(corpus.spec)) {
    h = fnv1a(k, h);
    h = fnv1a(v, h);
  }
  for (const auto& name : Corpus::split_names()) {
    h = fnv1a(name, h);
    for (const Triple& t : corpus.split(name)) {
      mix(t.src.data(), t.src.size() * sizeof(int));
      mix(t.tgt.data(), t.tgt.size() * sizeof(int));
      mix(t.frames.values.data(), t.frames.values.size() * sizeof(double));
    }
  }
  return h;
}

}  // namespace simcr
