// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include "simcr/vocab.hpp"

#include <charconv>
#include <cstdio>

namespace simcr {

std::string Vocab::name(int id) const {
  switch (id) {
    case kPad: return "<pad>";
    case kBos: return "<bos>";
    case kEos: return "<eos>";
    case kSrcTag: return "<src>";
    case kTgtTag: return "<tgt>";
    default: break;
  }
  char buf[16];
  if (is_src(id)) {
    std::snprintf(buf, sizeof buf, "s%03d", id - kFirstWord);
    return buf;
  }
  if (is_tgt(id)) {
    std::snprintf(buf, sizeof buf, "t%03d",
                  id - kFirstWord - static_cast<int>(src_size_));
    return buf;
  }
  return "<unk:" + std::to_string(id) + ">";
}

std::optional<int> Vocab::lookup(std::string_view name) const {
  for (int id = 0; id < kFirstWord; ++id) {
    if (this->name(id) == name) return id;
  }
  if (name.size() < 2 || (name[0] != 's' && name[0] != 't')) return std::nullopt;
  int index = 0;
  const auto* first = name.data() + 1;
  const auto* last = name.data() + name.size();
  auto [ptr, ec] = std::from_chars(first, last, index);
  if (ec != std::errc() || ptr != last || index < 0) return std::nullopt;
  const auto i = static_cast<std::size_t>(index);
  if (name[0] == 's') {
    if (i >= src_size_) return std::nullopt;
    return src_token(i);
  }
  if (i >= tgt_size_) return std::nullopt;
  return tgt_token(i);
}

std::optional<int> Vocab::parse_tag(std::string_view text) {
  if (text == "src" || text == "<src>") return kSrcTag;
  if (text == "tgt" || text == "<tgt>") return kTgtTag;
  return std::nullopt;
}

std::string Vocab::render(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += name(ids[i]);
  }
  return out;
}

}  // namespace simcr
