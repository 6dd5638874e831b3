// Copyright 2026 The mpinfer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/locid.h>
#include <unicode/unistr.h>

#include "mpinfer/errors.hpp"

namespace mpinfer {

inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";

struct TokenizerOptions {
  bool do_lower_case = true;
  bool char_level = false;  // every non-space codepoint is its own token
  std::size_t max_seq_len = 128;
  std::size_t max_chars_per_word = 100;
};

// Token <-> id table in BERT vocab.txt layout: line number is the id.
class Vocab {
 public:
  Vocab(std::vector<std::string> tokens, TokenizerOptions options = {})
      : tokens_(std::move(tokens)), options_(options) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
        throw FormatError("duplicate vocab token \"" + tokens_[i] + "\" at line " +
                          std::to_string(i + 1));
      }
    }
    cls_ = special(kClsToken);
    sep_ = special(kSepToken);
    pad_ = special(kPadToken);
    unk_ = special(kUnkToken);
  }

  static Vocab load(const std::filesystem::path& path, TokenizerOptions options = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read vocab file " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(std::move(line));
    }
    return Vocab(std::move(tokens), options);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write vocab file " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
  }

  std::optional<std::int32_t> find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::int32_t id_or_unk(std::string_view token) const {
    return find(token).value_or(unk_);
  }
  const std::string& token(std::int32_t id) const {
    return tokens_.at(static_cast<std::size_t>(id));
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const TokenizerOptions& options() const { return options_; }
  std::int32_t cls_id() const { return cls_; }
  std::int32_t sep_id() const { return sep_; }
  std::int32_t pad_id() const { return pad_; }
  std::int32_t unk_id() const { return unk_; }

 private:
  std::int32_t special(std::string_view tok) const {
    auto id = find(tok);
    if (!id) throw FormatError("vocab lacks special token " + std::string(tok));
    return *id;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  TokenizerOptions options_;
  std::int32_t cls_ = 0, sep_ = 0, pad_ = 0, unk_ = 0;
};

struct EncodedInput {
  std::vector<std::int32_t> token_ids;
  std::vector<std::int32_t> segment_ids;
  std::size_t attention_length = 0;

  std::size_t size() const { return token_ids.size(); }
};

namespace text {

inline std::u32string to_u32(const icu::UnicodeString& s) {
  std::u32string out;
  for (int32_t i = 0; i < s.length(); i = s.moveIndex32(i, 1)) {
    out.push_back(static_cast<char32_t>(s.char32At(i)));
  }
  return out;
}

inline icu::UnicodeString from_u32(std::u32string_view s) {
  icu::UnicodeString out;
  for (char32_t c : s) out.append(static_cast<UChar32>(c));
  return out;
}

inline std::string to_utf8(std::u32string_view s) {
  std::string out;
  from_u32(s).toUTF8String(out);
  return out;
}

inline icu::UnicodeString normalize(const icu::UnicodeString& s, bool decompose) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = decompose ? icu::Normalizer2::getNFDInstance(status)
                                        : icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU normalizer unavailable");
  icu::UnicodeString out = n->normalize(s, status);
  if (U_FAILURE(status)) throw Error("ICU normalization failed");
  return out;
}

inline bool is_whitespace(char32_t c) {
  if (c == U' ' || c == U'\t' || c == U'\n' || c == U'\r') return true;
  return u_charType(static_cast<UChar32>(c)) == U_SPACE_SEPARATOR;
}

inline bool is_control(char32_t c) {
  if (c == U'\t' || c == U'\n' || c == U'\r') return false;
  const auto t = u_charType(static_cast<UChar32>(c));
  return t == U_CONTROL_CHAR || t == U_FORMAT_CHAR;
}

inline bool is_punctuation(char32_t c) {
  if ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
      (c >= 123 && c <= 126)) {
    return true;
  }
  return u_ispunct(static_cast<UChar32>(c)) != 0;
}

// CJK Unified Ideographs blocks, as in the reference BERT tokenizer.
inline bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
         (c >= 0x20000 && c <= 0x2A6DF) || (c >= 0x2A700 && c <= 0x2B73F) ||
         (c >= 0x2B740 && c <= 0x2B81F) || (c >= 0x2B820 && c <= 0x2CEAF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x2F800 && c <= 0x2FA1F);
}

inline std::u32string lower_and_strip_accents(std::u32string_view word) {
  icu::UnicodeString s = from_u32(word);
  s.toLower(icu::Locale::getRoot());
  const std::u32string decomposed = to_u32(normalize(s, /*decompose=*/true));
  std::u32string out;
  for (char32_t c : decomposed) {
    if (u_charType(static_cast<UChar32>(c)) != U_NON_SPACING_MARK) out.push_back(c);
  }
  return out;
}

}  // namespace text

// Whitespace/punctuation/CJK splitting with optional lowercasing. Returns
// UTF-32 words ready for wordpiece.
inline std::vector<std::u32string> basic_tokenize(std::string_view utf8,
                                                  const TokenizerOptions& opts) {
  const icu::UnicodeString raw = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  const std::u32string normalized = text::to_u32(text::normalize(raw, false));

  std::u32string cleaned;
  cleaned.reserve(normalized.size());
  for (char32_t c : normalized) {
    if (c == 0 || c == 0xFFFD || text::is_control(c)) continue;
    if (text::is_whitespace(c)) {
      cleaned.push_back(U' ');
    } else if (text::is_cjk(c) || opts.char_level) {
      cleaned.push_back(U' ');
      cleaned.push_back(c);
      cleaned.push_back(U' ');
    } else {
      cleaned.push_back(c);
    }
  }

  std::vector<std::u32string> words;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && cleaned[i] == U' ') ++i;
    std::size_t j = i;
    while (j < cleaned.size() && cleaned[j] != U' ') ++j;
    if (j > i) {
      std::u32string w = cleaned.substr(i, j - i);
      if (opts.do_lower_case) w = text::lower_and_strip_accents(w);
      std::u32string cur;
      for (char32_t c : w) {
        if (text::is_punctuation(c)) {
          if (!cur.empty()) words.push_back(std::move(cur));
          cur.clear();
          words.emplace_back(1, c);
        } else {
          cur.push_back(c);
        }
      }
      if (!cur.empty()) words.push_back(std::move(cur));
    }
    i = j;
  }
  return words;
}

// Greedy longest-match-first split of one word. Continuation pieces carry a
// "##" prefix; if any position has no match the whole word becomes [UNK].
inline std::vector<std::string> wordpiece(const Vocab& vocab, std::u32string_view word) {
  if (word.size() > vocab.options().max_chars_per_word) {
    return {std::string(kUnkToken)};
  }
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::optional<std::string> match;
    while (start < end) {
      std::string candidate = text::to_utf8(word.substr(start, end - start));
      if (start > 0) candidate.insert(0, "##");
      if (vocab.find(candidate)) {
        match = std::move(candidate);
        break;
      }
      --end;
    }
    if (!match) return {std::string(kUnkToken)};
    pieces.push_back(std::move(*match));
    start = end;
  }
  return pieces;
}

inline std::vector<std::string> tokenize(const Vocab& vocab, std::string_view text) {
  const auto& opts = vocab.options();
  std::vector<std::string> out;
  for (const auto& word : basic_tokenize(text, opts)) {
    if (opts.char_level) {
      const std::string tok = text::to_utf8(word);
      out.push_back(vocab.find(tok) ? tok : std::string(kUnkToken));
      continue;
    }
    for (auto& p : wordpiece(vocab, word)) out.push_back(std::move(p));
  }
  return out;
}

// [CLS] a [SEP] (b [SEP]) truncated to max_seq_len, longest segment first,
// then padded with [PAD].
inline EncodedInput encode(const Vocab& vocab, std::string_view text_a,
                           std::optional<std::string_view> text_b = std::nullopt) {
  const std::size_t max_len = vocab.options().max_seq_len;
  const std::size_t specials = text_b ? 3 : 2;
  if (max_len < specials) {
    throw ConfigError("max_seq_len " + std::to_string(max_len) +
                      " cannot hold the special tokens");
  }
  std::vector<std::string> a = tokenize(vocab, text_a);
  std::vector<std::string> b;
  if (text_b) b = tokenize(vocab, *text_b);
  while (a.size() + b.size() + specials > max_len) {
    if (a.size() > b.size()) {
      a.pop_back();
    } else {
      b.pop_back();
    }
  }

  EncodedInput enc;
  enc.token_ids.reserve(max_len);
  enc.segment_ids.reserve(max_len);
  auto push = [&](std::int32_t id, std::int32_t seg) {
    enc.token_ids.push_back(id);
    enc.segment_ids.push_back(seg);
  };
  push(vocab.cls_id(), 0);
  for (const auto& t : a) push(vocab.id_or_unk(t), 0);
  push(vocab.sep_id(), 0);
  if (text_b) {
    for (const auto& t : b) push(vocab.id_or_unk(t), 1);
    push(vocab.sep_id(), 1);
  }
  enc.attention_length = enc.token_ids.size();
  while (enc.token_ids.size() < max_len) push(vocab.pad_id(), 0);
  return enc;
}

struct TextPair {
  std::string a;
  std::optional<std::string> b;
};

// Encodes texts independently, split across `threads` workers. Output order
// matches input order.
inline std::vector<EncodedInput> encode_batch(const Vocab& vocab,
                                              const std::vector<TextPair>& texts,
                                              int threads = 1) {
  std::vector<EncodedInput> out(texts.size());
  auto work = [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto& t = texts[i];
      out[i] = t.b ? encode(vocab, t.a, std::string_view(*t.b)) : encode(vocab, t.a);
    }
  };
  const std::size_t n = texts.size();
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    work(0, n);
    return out;
  }
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t b = w * chunk;
      const std::size_t e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }
  return out;
}

}  // namespace mpinfer
