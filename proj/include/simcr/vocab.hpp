// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace simcr {

enum class Lang { Source, Target };

/// Joint vocabulary: reserved tokens, one tag per language, then the source
/// surface forms s000.. and the target surface forms t000.. (disjoint).
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSrcTag = 3;
  static constexpr int kTgtTag = 4;
  static constexpr int kFirstWord = 5;

  Vocab(std::size_t src_size, std::size_t tgt_size)
      : src_size_(src_size), tgt_size_(tgt_size) {}

  std::size_t size() const { return kFirstWord + src_size_ + tgt_size_; }
  std::size_t src_size() const { return src_size_; }
  std::size_t tgt_size() const { return tgt_size_; }

  int src_token(std::size_t i) const { return kFirstWord + static_cast<int>(i); }
  int tgt_token(std::size_t i) const {
    return kFirstWord + static_cast<int>(src_size_ + i);
  }
  bool is_src(int id) const {
    return id >= kFirstWord && id < kFirstWord + static_cast<int>(src_size_);
  }
  bool is_tgt(int id) const {
    const int first = kFirstWord + static_cast<int>(src_size_);
    return id >= first && id < first + static_cast<int>(tgt_size_);
  }
  bool is_tag(int id) const { return id == kSrcTag || id == kTgtTag; }

  static int tag(Lang lang) { return lang == Lang::Source ? kSrcTag : kTgtTag; }

  std::string name(int id) const;
  std::optional<int> lookup(std::string_view name) const;
  /// Registered language tags as surface strings.
  static std::vector<std::string> tag_names() { return {"<src>", "<tgt>"}; }
  /// Accepts "src"/"tgt" with or without angle brackets.
  static std::optional<int> parse_tag(std::string_view text);

  std::string render(const std::vector<int>& ids) const;

 private:
  std::size_t src_size_;
  std::size_t tgt_size_;
};

}  // namespace simcr
