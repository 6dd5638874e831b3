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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpinfer/errors.hpp"
#include "mpinfer/quant.hpp"
#include "mpinfer/tensor.hpp"
#include "mpinfer/tokenizer.hpp"

namespace mpinfer {

enum class Task { kClassification, kSequenceLabeling, kTextMatching };

inline const char* to_string(Task t) {
  switch (t) {
    case Task::kClassification: return "classification";
    case Task::kSequenceLabeling: return "sequence_labeling";
    case Task::kTextMatching: return "text_matching";
  }
  return "?";
}

inline Task task_from_string(const std::string& s) {
  if (s == "classification") return Task::kClassification;
  if (s == "sequence_labeling") return Task::kSequenceLabeling;
  if (s == "text_matching") return Task::kTextMatching;
  throw FormatError("unknown task \"" + s + "\"");
}

struct ModelManifest {
  std::size_t num_layers = 1;
  std::size_t hidden = 1;
  std::size_t num_heads = 1;
  std::size_t intermediate = 1;
  std::size_t vocab_size = 1;
  std::size_t max_position = 1;
  std::size_t type_vocab_size = 1;
  float layernorm_eps = 1e-12f;
  Task task = Task::kClassification;
  std::size_t num_labels = 1;
  // Tokenizer settings; optional in manifest.json.
  bool do_lower_case = true;
  bool char_tokenization = false;
  std::optional<std::size_t> max_seq_len;

  std::size_t head_dim() const { return hidden / num_heads; }
  std::size_t seq_len() const { return max_seq_len.value_or(max_position); }

  TokenizerOptions tokenizer_options() const {
    TokenizerOptions o;
    o.do_lower_case = do_lower_case;
    o.char_level = char_tokenization;
    o.max_seq_len = seq_len();
    return o;
  }

  void validate() const {
    const std::pair<const char*, std::size_t> sizes[] = {
        {"num_layers", num_layers},     {"hidden", hidden},
        {"num_heads", num_heads},       {"intermediate", intermediate},
        {"vocab_size", vocab_size},     {"max_position", max_position},
        {"type_vocab_size", type_vocab_size}, {"num_labels", num_labels}};
    for (const auto& [name, v] : sizes) {
      if (v < 1) throw LoadError(std::string("manifest field ") + name + " must be >= 1");
    }
    if (hidden % num_heads != 0) {
      throw LoadError(detail::concat("hidden ", hidden, " is not divisible by num_heads ",
                                     num_heads));
    }
    if (!(layernorm_eps >= 0.0f)) throw LoadError("layernorm_eps must be >= 0");
    if (seq_len() > max_position) {
      throw LoadError(detail::concat("max_seq_len ", seq_len(), " exceeds max_position ",
                                     max_position));
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"num_layers", num_layers},
                        {"hidden", hidden},
                        {"num_heads", num_heads},
                        {"intermediate", intermediate},
                        {"vocab_size", vocab_size},
                        {"max_position", max_position},
                        {"type_vocab_size", type_vocab_size},
                        {"layernorm_eps", layernorm_eps},
                        {"task", to_string(task)},
                        {"num_labels", num_labels},
                        {"do_lower_case", do_lower_case},
                        {"char_tokenization", char_tokenization}};
    if (max_seq_len) j["max_seq_len"] = *max_seq_len;
    return j;
  }

  static ModelManifest from_json(const nlohmann::json& j) {
    ModelManifest m;
    try {
      m.num_layers = j.at("num_layers").get<std::size_t>();
      m.hidden = j.at("hidden").get<std::size_t>();
      m.num_heads = j.at("num_heads").get<std::size_t>();
      m.intermediate = j.at("intermediate").get<std::size_t>();
      m.vocab_size = j.at("vocab_size").get<std::size_t>();
      m.max_position = j.at("max_position").get<std::size_t>();
      m.type_vocab_size = j.at("type_vocab_size").get<std::size_t>();
      m.layernorm_eps = j.value("layernorm_eps", 1e-12f);
      m.task = task_from_string(j.at("task").get<std::string>());
      m.num_labels = j.at("num_labels").get<std::size_t>();
      m.do_lower_case = j.value("do_lower_case", true);
      m.char_tokenization = j.value("char_tokenization", false);
      if (j.contains("max_seq_len")) m.max_seq_len = j["max_seq_len"].get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("manifest.json: ") + e.what());
    }
    m.validate();
    return m;
  }

  friend bool operator==(const ModelManifest&, const ModelManifest&) = default;
};

namespace keys {

inline std::string layer(std::size_t i, const std::string& suffix) {
  return "encoder.layer." + std::to_string(i) + "." + suffix;
}

inline constexpr const char* kWordEmb = "embeddings.word.weight";
inline constexpr const char* kPosEmb = "embeddings.position.weight";
inline constexpr const char* kTypeEmb = "embeddings.token_type.weight";
inline constexpr const char* kEmbGamma = "embeddings.layernorm.gamma";
inline constexpr const char* kEmbBeta = "embeddings.layernorm.beta";
inline constexpr const char* kPoolerW = "pooler.weight";
inline constexpr const char* kPoolerB = "pooler.bias";
inline constexpr const char* kHeadW = "head.weight";
inline constexpr const char* kHeadB = "head.bias";

}  // namespace keys

inline bool task_uses_pooler(Task t) { return t != Task::kSequenceLabeling; }

// Every tensor key the manifest requires, with its exact shape. Weight
// matrices are (in_features x out_features).
inline std::map<std::string, Shape> required_tensor_shapes(const ModelManifest& m) {
  const std::size_t h = m.hidden;
  std::map<std::string, Shape> s;
  s[keys::kWordEmb] = {m.vocab_size, h};
  s[keys::kPosEmb] = {m.max_position, h};
  s[keys::kTypeEmb] = {m.type_vocab_size, h};
  s[keys::kEmbGamma] = {h};
  s[keys::kEmbBeta] = {h};
  for (std::size_t i = 0; i < m.num_layers; ++i) {
    for (const char* p : {"q", "k", "v", "out"}) {
      s[keys::layer(i, std::string("attn.") + p + ".weight")] = {h, h};
      s[keys::layer(i, std::string("attn.") + p + ".bias")] = {h};
    }
    s[keys::layer(i, "attn.layernorm.gamma")] = {h};
    s[keys::layer(i, "attn.layernorm.beta")] = {h};
    s[keys::layer(i, "ffn.w1")] = {h, m.intermediate};
    s[keys::layer(i, "ffn.b1")] = {m.intermediate};
    s[keys::layer(i, "ffn.w2")] = {m.intermediate, h};
    s[keys::layer(i, "ffn.b2")] = {h};
    s[keys::layer(i, "ffn.layernorm.gamma")] = {h};
    s[keys::layer(i, "ffn.layernorm.beta")] = {h};
  }
  if (task_uses_pooler(m.task)) {
    s[keys::kPoolerW] = {h, h};
    s[keys::kPoolerB] = {h};
  }
  s[keys::kHeadW] = {h, m.num_labels};
  s[keys::kHeadB] = {m.num_labels};
  return s;
}

struct ModelArchive {
  ModelManifest manifest;
  std::map<std::string, TensorF> tensors;
  Vocab vocab;
  std::optional<CalibrationTable> calibration;

  const TensorF& tensor(const std::string& key) const {
    auto it = tensors.find(key);
    if (it == tensors.end()) throw LoadError("missing tensor \"" + key + "\"");
    return it->second;
  }
};

struct LoadOptions {
  bool permissive = false;  // tolerate unrecognized tensor keys
};

inline void validate_archive(const ModelArchive& a, const LoadOptions& opts = {}) {
  a.manifest.validate();
  if (a.tensors.empty()) throw FormatError("archive has no tensors");
  const auto shapes = required_tensor_shapes(a.manifest);
  for (const auto& [key, shape] : shapes) {
    auto it = a.tensors.find(key);
    if (it == a.tensors.end()) throw LoadError("missing tensor \"" + key + "\"");
    if (it->second.shape() != shape) {
      throw LoadError("tensor \"" + key + "\" has shape " +
                      shape_string(it->second.shape()) + ", expected " +
                      shape_string(shape));
    }
  }
  if (!opts.permissive) {
    for (const auto& [key, t] : a.tensors) {
      if (!shapes.count(key)) throw LoadError("unrecognized tensor \"" + key + "\"");
    }
  }
  if (a.vocab.size() != a.manifest.vocab_size) {
    throw LoadError(detail::concat("vocab.txt has ", a.vocab.size(),
                                   " tokens, manifest vocab_size is ",
                                   a.manifest.vocab_size));
  }
}

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

inline void fnv1a(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw LoadError("cannot open " + p.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << s;
  if (!out) throw Error("write failed for " + p.string());
}

}  // namespace detail

// Stable identity of the weights: FNV-1a over the manifest and every tensor
// (sorted by key). Calibration tables record it.
inline std::string model_fingerprint(const ModelArchive& a) {
  std::uint64_t h = 1469598103934665603ull;
  const std::string m = a.manifest.to_json().dump();
  detail::fnv1a(h, m.data(), m.size());
  for (const auto& [key, t] : a.tensors) {
    detail::fnv1a(h, key.data(), key.size());
    for (float v : t.data()) {
      const std::uint32_t le = detail::to_le(std::bit_cast<std::uint32_t>(v));
      detail::fnv1a(h, &le, sizeof(le));
    }
  }
  std::ostringstream oss;
  oss << std::hex << std::setw(16) << std::setfill('0') << h;
  return oss.str();
}

// Writes manifest.json, tensors.bin, tensors.idx.json, vocab.txt and, when
// present, calibration.json. Tensors are laid out in key order, so the same
// archive always produces the same bytes.
inline void write_archive(const ModelArchive& a, const std::filesystem::path& dir) {
  if (a.tensors.empty()) throw FormatError("archive has no tensors to serialize");
  validate_archive(a, {.permissive = true});
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());

  detail::write_text(dir / "manifest.json", a.manifest.to_json().dump(2) + "\n");

  nlohmann::json index = nlohmann::json::object();
  std::string blob;
  for (const auto& [key, t] : a.tensors) {
    index[key] = {{"offset_bytes", blob.size()}, {"shape", t.shape()}};
    for (float v : t.data()) {
      const std::uint32_t le = detail::to_le(std::bit_cast<std::uint32_t>(v));
      blob.append(reinterpret_cast<const char*>(&le), sizeof(le));
    }
  }
  detail::write_text(dir / "tensors.bin", blob);
  detail::write_text(dir / "tensors.idx.json", index.dump(2) + "\n");
  a.vocab.save(dir / "vocab.txt");
  if (a.calibration) a.calibration->save(dir / "calibration.json");
}

inline ModelArchive load_archive(const std::filesystem::path& dir,
                                 const LoadOptions& opts = {}) {
  const ModelManifest manifest = ModelManifest::from_json(detail::read_json(dir / "manifest.json"));
  const nlohmann::json index = detail::read_json(dir / "tensors.idx.json");
  if (!index.is_object()) throw FormatError("tensors.idx.json must be an object");

  std::ifstream bin(dir / "tensors.bin", std::ios::binary);
  if (!bin) throw LoadError("cannot open " + (dir / "tensors.bin").string());
  const std::string blob((std::istreambuf_iterator<char>(bin)),
                         std::istreambuf_iterator<char>());

  std::map<std::string, TensorF> tensors;
  std::size_t covered = 0;
  for (const auto& [key, entry] : index.items()) {
    Shape shape;
    std::size_t offset = 0;
    try {
      offset = entry.at("offset_bytes").get<std::size_t>();
      shape = entry.at("shape").get<Shape>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("tensors.idx.json entry \"" + key + "\": " + e.what());
    }
    const std::size_t count = shape_numel(shape);
    const std::size_t bytes = count * sizeof(float);
    if (offset % sizeof(float) != 0 || offset + bytes > blob.size()) {
      throw FormatError(detail::concat("tensor \"", key, "\" spans bytes [", offset, ", ",
                                       offset + bytes, ") but tensors.bin holds ",
                                       blob.size()));
    }
    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t le;
      std::memcpy(&le, blob.data() + offset + i * sizeof(le), sizeof(le));
      data[i] = std::bit_cast<float>(detail::to_le(le));
    }
    try {
      tensors.emplace(key, TensorF(std::move(shape), std::move(data)));
    } catch (const DimensionError& e) {
      throw FormatError("tensor \"" + key + "\": " + e.what());
    }
    covered += bytes;
  }
  if (covered != blob.size()) {
    throw FormatError(detail::concat("tensors.bin holds ", blob.size(),
                                     " bytes but the index describes ", covered));
  }

  ModelArchive a{manifest, std::move(tensors),
                 Vocab::load(dir / "vocab.txt", manifest.tokenizer_options()),
                 std::nullopt};
  if (std::filesystem::exists(dir / "calibration.json")) {
    a.calibration = CalibrationTable::load(dir / "calibration.json");
  }
  validate_archive(a, opts);
  return a;
}

}  // namespace mpinfer
