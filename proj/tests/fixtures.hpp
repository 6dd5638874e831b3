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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mpinfer/model_io.hpp"

namespace fixtures {

using namespace mpinfer;

inline std::filesystem::path data_dir() { return MPINFER_TEST_DATA; }

// Uniform in [-1, 1) from raw mt19937 output, so generated weights do not
// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint32_t seed) : g_(seed) {}
  float uniform() { return static_cast<float>(static_cast<double>(g_()) / 2147483648.0 - 1.0); }
  std::uint32_t next(std::uint32_t n) { return g_() % n; }

 private:
  std::mt19937 g_;
};

inline std::vector<std::string> synthetic_vocab() {
  std::vector<std::string> v{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  for (const char* w : {"the", "a", "cat", "dog", "sat", "on", "mat", "run", "##s", "##ing",
                        "##ed", "un", "##aff", "##able", "play", "good", "bad", "movie",
                        "is", "was", "very", "not", "i", "like", "it", "this", "that", ",",
                        ".", "!", "?", "bank", "river", "money", "open", "##er", "hello",
                        "world", "##ly", "quick", "brown", "fox"}) {
    v.emplace_back(w);
  }
  for (const char* w : {"中", "国", "人", "民", "银", "行", "我", "爱", "北", "京"}) v.emplace_back(w);
  return v;
}

struct Spec {
  std::size_t layers = 2;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t intermediate = 64;
  std::size_t max_position = 64;
  Task task = Task::kClassification;
  std::size_t labels = 3;
  std::uint32_t seed = 7;
  // Larger models for benchmarks pad the vocab with filler tokens.
  std::size_t extra_vocab = 0;
};

inline ModelArchive make_archive(const Spec& s) {
  Rng rng(s.seed);
  std::vector<std::string> tokens = synthetic_vocab();
  for (std::size_t i = 0; i < s.extra_vocab; ++i) tokens.push_back("tok" + std::to_string(i));
  ModelManifest m;
  m.num_layers = s.layers;
  m.hidden = s.hidden;
  m.num_heads = s.heads;
  m.intermediate = s.intermediate;
  m.vocab_size = tokens.size();
  m.max_position = s.max_position;
  m.type_vocab_size = 2;
  m.layernorm_eps = 1e-12f;
  m.task = s.task;
  m.num_labels = s.labels;
  m.max_seq_len = std::min<std::size_t>(s.max_position, 32);

  std::map<std::string, TensorF> t;
  for (const auto& [key, shape] : required_tensor_shapes(m)) {
    const std::size_t n = shape_numel(shape);
    std::vector<float> v(n);
    const bool gamma = key.ends_with("gamma");
    const bool beta = key.ends_with("beta") || key.ends_with("bias") || key.ends_with(".b1") ||
                      key.ends_with(".b2");
    const float amp = key.starts_with("head.") ? 1.0f
                      : gamma                   ? 0.1f
                      : beta ? 0.05f
                      : shape.size() == 2 && key.find("embeddings") == std::string::npos
                          ? std::sqrt(3.0f / static_cast<float>(shape[0]))
                          : 1.0f;
    for (auto& x : v) x = (gamma ? 1.0f : 0.0f) + amp * rng.uniform();
    t.emplace(key, TensorF(shape, std::move(v)));
  }
  return ModelArchive{m, std::move(t), Vocab(tokens, m.tokenizer_options()), std::nullopt};
}

inline std::shared_ptr<const ModelArchive> shared(ModelArchive a) {
  return std::make_shared<const ModelArchive>(std::move(a));
}

// Random-id inputs of length seq with `pad` trailing pad positions.
inline EncodedInput random_input(const ModelManifest& m, std::size_t seq, std::size_t pad,
                                 std::uint32_t seed) {
  Rng rng(seed);
  EncodedInput in;
  for (std::size_t i = 0; i < seq; ++i) {
    const bool is_pad = i >= seq - pad;
    in.token_ids.push_back(is_pad ? 0 : static_cast<std::int32_t>(rng.next(static_cast<std::uint32_t>(m.vocab_size))));
    in.segment_ids.push_back(is_pad ? 0 : static_cast<std::int32_t>(i >= seq / 2));
  }
  in.attention_length = seq - pad;
  return in;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::vector<std::string> calibration_texts() {
  return {"the cat sat on the mat.",
          "i like this movie very much!",
          "the quick brown fox was not bad",
          "我爱北京",
          "hello world, unaffable dogs running",
          "open the bank by the river",
          "中国人民银行",
          "that dog is good, this cat is bad?"};
}

}  // namespace fixtures
