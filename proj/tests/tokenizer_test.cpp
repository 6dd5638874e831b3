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

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "mpinfer/tokenizer.hpp"

using namespace mpinfer;

namespace {

Vocab toy(std::vector<std::string> extra, TokenizerOptions o = {}) {
  std::vector<std::string> t{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  t.insert(t.end(), extra.begin(), extra.end());
  return Vocab(std::move(t), o);
}

using Pieces = std::vector<std::string>;

}  // namespace

TEST(Vocab, RequiresSpecialsAndUniqueTokens) {
  EXPECT_THROW(Vocab({"[PAD]", "[UNK]", "[CLS]"}), FormatError);
  EXPECT_THROW(Vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "a"}), FormatError);
  const Vocab v = toy({"a"});
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.cls_id(), 2);
  EXPECT_EQ(v.id_or_unk("zzz"), v.unk_id());
  EXPECT_EQ(v.token(4), "a");
}

TEST(Vocab, FileRoundTripLineNumberIsId) {
  const Vocab v = toy({"hello", "##lo", "中"});
  const auto path = std::filesystem::temp_directory_path() / "mpinfer_vocab_test.txt";
  v.save(path);
  const Vocab back = Vocab::load(path);
  EXPECT_EQ(back.tokens(), v.tokens());
  EXPECT_EQ(*back.find("中"), 6);
  std::filesystem::remove(path);
}

TEST(Tokenize, EmptyText) { EXPECT_TRUE(tokenize(toy({}), "").empty()); }

TEST(Tokenize, GreedyLongestMatchHandTraces) {
  const Vocab v = toy({"un", "##able", "##a", "##ble", "unab", "##le", "play", "##ing", "##s"});
  // "unab" is the longest prefix; then "##le".
  EXPECT_EQ(tokenize(v, "unable"), (Pieces{"unab", "##le"}));
  EXPECT_EQ(tokenize(toy({"un", "##able"}), "unable"), (Pieces{"un", "##able"}));
  EXPECT_EQ(tokenize(v, "playing plays"), (Pieces{"play", "##ing", "play", "##s"}));
  // One unmatched position turns the whole word into [UNK].
  EXPECT_EQ(tokenize(v, "playx"), (Pieces{"[UNK]"}));
  EXPECT_EQ(tokenize(toy({"a"}), "xyz"), (Pieces{"[UNK]"}));
}

TEST(Tokenize, PunctuationCjkAndCase) {
  const Vocab v = toy({"hello", ",", "world", "!", "中", "国", "cafe"});
  EXPECT_EQ(tokenize(v, "Hello,WORLD!"), (Pieces{"hello", ",", "world", "!"}));
  EXPECT_EQ(tokenize(v, "hello中国world"), (Pieces{"hello", "中", "国", "world"}));
  // Accents are stripped only with lowercasing.
  EXPECT_EQ(tokenize(v, "Café"), (Pieces{"cafe"}));
  TokenizerOptions cased;
  cased.do_lower_case = false;
  const Vocab vc = toy({"Café", "cafe"}, cased);
  EXPECT_EQ(tokenize(vc, "Café"), (Pieces{"Café"}));
  // NFC: decomposed input matches the composed vocab entry.
  EXPECT_EQ(tokenize(vc, "Café"), (Pieces{"Café"}));
}

TEST(Tokenize, WhitespaceAndControlCharacters) {
  const Vocab v = toy({"a", "b"});
  EXPECT_EQ(tokenize(v, "  a\t\n b a\x01"), (Pieces{"a", "b", "a"}));
}

TEST(Tokenize, CharacterLevelMode) {
  TokenizerOptions o;
  o.char_level = true;
  const Vocab v = toy({"a", "b", "中"}, o);
  EXPECT_EQ(tokenize(v, "ab 中c"), (Pieces{"a", "b", "中", "[UNK]"}));
}

TEST(Tokenize, OverlongWordIsUnk) {
  TokenizerOptions o;
  o.max_chars_per_word = 4;
  const Vocab v = toy({"a", "##a"}, o);
  EXPECT_EQ(tokenize(v, "aaaa"), (Pieces{"a", "##a", "##a", "##a"}));
  EXPECT_EQ(tokenize(v, "aaaaa"), (Pieces{"[UNK]"}));
}

TEST(Tokenize, PiecesReconstructWordUnlessUnk) {
  const Vocab v = toy({"t", "##h", "##e", "th", "##ere", "h", "e", "r", "##r", "##t"});
  std::mt19937 g(3);
  const std::string alphabet = "thre";
  for (int i = 0; i < 500; ++i) {
    std::string w;
    const int n = 1 + static_cast<int>(g() % 8);
    for (int k = 0; k < n; ++k) w += alphabet[g() % alphabet.size()];
    const auto pieces = tokenize(v, w);
    if (pieces == Pieces{"[UNK]"}) continue;
    std::string joined;
    for (const auto& p : pieces) joined += p.starts_with("##") ? p.substr(2) : p;
    EXPECT_EQ(joined, w);
  }
}

TEST(Encode, EmptySingle) {
  TokenizerOptions o;
  o.max_seq_len = 8;
  const Vocab v = toy({}, o);
  const EncodedInput e = encode(v, "");
  EXPECT_EQ(e.token_ids, (std::vector<std::int32_t>{2, 3, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(e.segment_ids, std::vector<std::int32_t>(8, 0));
  EXPECT_EQ(e.attention_length, 2u);
}

TEST(Encode, PairHandTrace) {
  TokenizerOptions o;
  o.max_seq_len = 10;
  const Vocab v = toy({"a", "b", "c"}, o);  // a=4 b=5 c=6
  const EncodedInput e = encode(v, "a b", std::string_view("c"));
  EXPECT_EQ(e.token_ids, (std::vector<std::int32_t>{2, 4, 5, 3, 6, 3, 0, 0, 0, 0}));
  EXPECT_EQ(e.segment_ids, (std::vector<std::int32_t>{0, 0, 0, 0, 1, 1, 0, 0, 0, 0}));
  EXPECT_EQ(e.attention_length, 6u);
}

TEST(Encode, PairTruncatesLongestFirst) {
  TokenizerOptions o;
  o.max_seq_len = 7;
  const Vocab v = toy({"a", "b"}, o);
  // 5 + 2 tokens, room for 4: a loses 3.
  const EncodedInput e = encode(v, "a a a a a", std::string_view("b b"));
  EXPECT_EQ(e.token_ids, (std::vector<std::int32_t>{2, 4, 4, 3, 5, 5, 3}));
  // Equal lengths: b gives up first.
  const EncodedInput f = encode(v, "a a a", std::string_view("b b b"));
  EXPECT_EQ(f.token_ids, (std::vector<std::int32_t>{2, 4, 4, 3, 5, 5, 3}));
}

TEST(Encode, TooShortMaxLenIsConfigError) {
  TokenizerOptions o;
  o.max_seq_len = 2;
  const Vocab v = toy({}, o);
  EXPECT_NO_THROW(encode(v, "x"));
  EXPECT_THROW(encode(v, "x", std::string_view("y")), ConfigError);
}

TEST(Encode, RandomizedLengthAndSegmentContracts) {
  std::mt19937 g(11);
  const std::vector<std::string> words{"a", "b", "cc", "ddd", "中", "!", "zz", "Ab", "é"};
  for (int trial = 0; trial < 2000; ++trial) {
    TokenizerOptions o;
    o.max_seq_len = 3 + g() % 20;
    const Vocab v = toy({"a", "b", "##c", "c", "d", "##d", "中", "!", "e"}, o);
    auto sentence = [&] {
      std::string s;
      const int n = static_cast<int>(g() % 15);
      for (int i = 0; i < n; ++i) s += words[g() % words.size()] + " ";
      return s;
    };
    const std::string a = sentence();
    const bool pair = g() % 2;
    const std::string b = sentence();
    const EncodedInput e = pair ? encode(v, a, std::string_view(b)) : encode(v, a);
    ASSERT_EQ(e.token_ids.size(), o.max_seq_len);
    ASSERT_EQ(e.segment_ids.size(), o.max_seq_len);
    ASSERT_LE(e.attention_length, o.max_seq_len);
    EXPECT_EQ(e.token_ids[0], v.cls_id());
    for (std::size_t i = 0; i < o.max_seq_len; ++i) {
      EXPECT_EQ(e.token_ids[i] == v.pad_id(), i >= e.attention_length);
    }
    EXPECT_EQ(e.token_ids[e.attention_length - 1], v.sep_id());
    std::size_t first_sep = 0;
    while (e.token_ids[first_sep] != v.sep_id()) ++first_sep;
    for (std::size_t i = 0; i < o.max_seq_len; ++i) {
      const int want = pair && i > first_sep && i < e.attention_length ? 1 : 0;
      EXPECT_EQ(e.segment_ids[i], want);
    }
    if (!pair) {
      EXPECT_EQ(first_sep, e.attention_length - 1);
    }
    const std::size_t full = tokenize(v, a).size() + (pair ? tokenize(v, b).size() + 3 : 2);
    EXPECT_EQ(e.attention_length, std::min<std::size_t>(full, o.max_seq_len));
  }
}

TEST(EncodeBatch, MatchesSequentialForAnyThreadCount) {
  const Vocab v = toy({"a", "b", "c"});
  std::vector<TextPair> texts;
  for (int i = 0; i < 37; ++i) {
    texts.push_back({std::string(static_cast<std::size_t>(i % 5) * 2, 'a'),
                     i % 3 ? std::optional<std::string>("b c") : std::nullopt});
  }
  const auto ref = encode_batch(v, texts, 1);
  for (int t : {2, 4, 64}) {
    const auto got = encode_batch(v, texts, t);
    ASSERT_EQ(got.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_EQ(got[i].token_ids, ref[i].token_ids);
      EXPECT_EQ(got[i].segment_ids, ref[i].segment_ids);
    }
  }
}
