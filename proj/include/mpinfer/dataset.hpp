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

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/utf8.h>

#include "mpinfer/errors.hpp"
#include "mpinfer/model_io.hpp"
#include "mpinfer/tokenizer.hpp"

namespace mpinfer {

struct LabeledExample {
  TextPair text;
  std::vector<int> labels;  // one entry, or one per position for tagging
};

namespace detail {

inline bool valid_utf8(std::string_view s) {
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  const int32_t n = static_cast<int32_t>(s.size());
  int32_t i = 0;
  while (i < n) {
    UChar32 c;
    U8_NEXT(p, i, n, c);
    if (c < 0) return false;
  }
  return true;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

inline int parse_label(const std::string& s, std::size_t num_labels, std::size_t line) {
  int v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw DatasetError("label \"" + s + "\" is not an integer", line);
  if (v < 0 || static_cast<std::size_t>(v) >= num_labels) {
    throw DatasetError(detail::concat("label ", v, " outside [0, ", num_labels, ")"), line);
  }
  return v;
}

// Non-blank lines with their 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::string>> read_lines(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<std::pair<std::size_t, std::string>> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (!valid_utf8(line)) throw DatasetError("invalid UTF-8", no);
    out.emplace_back(no, std::move(line));
  }
  if (out.empty()) throw DatasetError("no usable lines in " + path.string(), no == 0 ? 1 : no);
  return out;
}

}  // namespace detail

// Raw texts, one per line; text_matching models read "a<TAB>b".
inline std::vector<TextPair> parse_raw_texts(const std::filesystem::path& path, Task task) {
  std::vector<TextPair> out;
  for (auto& [no, line] : detail::read_lines(path)) {
    const auto cols = detail::split_tabs(line);
    if (task == Task::kTextMatching) {
      if (cols.size() != 2) throw DatasetError("expected \"text_a<TAB>text_b\"", no);
      out.push_back({cols[0], cols[1]});
    } else {
      if (cols.size() != 1) throw DatasetError("expected a single text column", no);
      out.push_back({cols[0], std::nullopt});
    }
  }
  return out;
}

// Labeled evaluation TSV:
//   classification      text<TAB>label
//   text_matching       text_a<TAB>text_b<TAB>label
//   sequence_labeling   text<TAB>space-separated labels, one per encoded position
inline std::vector<LabeledExample> parse_eval_file(const std::filesystem::path& path,
                                                   const ModelManifest& m) {
  std::vector<LabeledExample> out;
  for (auto& [no, line] : detail::read_lines(path)) {
    const auto cols = detail::split_tabs(line);
    LabeledExample ex;
    const std::size_t want = m.task == Task::kTextMatching ? 3 : 2;
    if (cols.size() != want) {
      throw DatasetError(detail::concat("expected ", want, " tab-separated columns, got ",
                                        cols.size()),
                         no);
    }
    ex.text.a = cols[0];
    if (m.task == Task::kTextMatching) ex.text.b = cols[1];
    const std::string& label_col = cols.back();
    if (m.task == Task::kSequenceLabeling) {
      std::size_t pos = 0;
      while (pos < label_col.size()) {
        const std::size_t sp = label_col.find(' ', pos);
        const std::string tok = label_col.substr(pos, sp - pos);
        if (!tok.empty()) ex.labels.push_back(detail::parse_label(tok, m.num_labels, no));
        if (sp == std::string::npos) break;
        pos = sp + 1;
      }
      if (ex.labels.empty()) throw DatasetError("no labels", no);
    } else {
      ex.labels.push_back(detail::parse_label(label_col, m.num_labels, no));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace mpinfer
