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
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpinfer/errors.hpp"
#include "mpinfer/kernels.hpp"
#include "mpinfer/tensor.hpp"

namespace mpinfer {

inline constexpr float kMinAmax = 1e-8f * 127.0f;

// Symmetric INT8 scale: amax maps to code 127.
inline float scale_from_amax(float amax) {
  return std::max(amax, kMinAmax) / 127.0f;
}

struct QuantScale {
  std::string site;
  float amax = 0.0f;
  float scale = scale_from_amax(0.0f);

  bool floored() const { return amax < kMinAmax; }
};

namespace detail {

inline void check_scale(float scale, const char* what) {
  if (!(scale > 0.0f) || !std::isfinite(scale)) {
    throw CalibrationError(detail::concat(what, ": scale must be positive and finite, got ",
                                          scale));
  }
}

// Round half away from zero, then saturate. NaN maps to 0.
inline std::int8_t saturate_round(double v) {
  if (std::isnan(v)) return 0;
  const double r = std::round(v);
  return static_cast<std::int8_t>(std::clamp(r, -128.0, 127.0));
}

}  // namespace detail

inline std::int8_t quantize_value(float x, float scale) {
  return detail::saturate_round(static_cast<double>(x) / static_cast<double>(scale));
}

inline TensorI8 quantize(const TensorF& x, float scale) {
  detail::check_scale(scale, "quantize");
  std::vector<std::int8_t> q(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) q[i] = quantize_value(x[i], scale);
  ++counters().quantize_calls;
  return TensorI8(x.shape(), std::move(q));
}

inline TensorF dequantize(const TensorI8& q, float scale) {
  detail::check_scale(scale, "dequantize");
  std::vector<float> x(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) x[i] = static_cast<float>(q[i]) * scale;
  ++counters().dequantize_calls;
  return TensorF(q.shape(), std::move(x));
}

// Dequantizes an INT32 GEMM result with multiplier scale_a*scale_b, returning
// FP32. The fused kernels in the encoder build on this.
inline TensorF dequantize_i32(const TensorI32& c, float multiplier) {
  std::vector<float> x(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    x[i] = static_cast<float>(static_cast<double>(c[i]) * multiplier);
  }
  ++counters().dequantize_calls;
  return TensorF(c.shape(), std::move(x));
}

// INT32 accumulator straight to INT8 codes under the output scale.
inline TensorI8 requantize_i32(const TensorI32& c, float scale_a, float scale_b,
                               float scale_out) {
  detail::check_scale(scale_a, "requantize_i32 scale_a");
  detail::check_scale(scale_b, "requantize_i32 scale_b");
  detail::check_scale(scale_out, "requantize_i32 scale_out");
  const double mult = static_cast<double>(scale_a) * scale_b / scale_out;
  std::vector<std::int8_t> q(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    q[i] = detail::saturate_round(static_cast<double>(c[i]) * mult);
  }
  ++counters().quantize_calls;
  return TensorI8(c.shape(), std::move(q));
}

inline float max_abs(std::span<const float> x) {
  float m = 0.0f;
  for (float v : x) {
    const float a = std::fabs(v);
    if (a > m) m = a;
  }
  return m;
}

// Site name -> running max |x|. Scales are always derived from amax, never
// stored.
class CalibrationTable {
 public:
  CalibrationTable() = default;
  explicit CalibrationTable(std::string fingerprint)
      : fingerprint_(std::move(fingerprint)) {}

  const std::string& fingerprint() const { return fingerprint_; }
  void set_fingerprint(std::string fp) { fingerprint_ = std::move(fp); }

  // Min-max observation: amax := max(amax, max|x|).
  void observe(const std::string& site, std::span<const float> x) {
    float& a = amax_[site];
    a = std::max(a, max_abs(x));
  }
  void observe(const std::string& site, const TensorF& x) { observe(site, x.data()); }

  void set_amax(const std::string& site, float amax) {
    if (!(amax >= 0.0f) || !std::isfinite(amax)) {
      throw CalibrationError(detail::concat("site ", site, ": amax must be finite and >= 0"));
    }
    amax_[site] = amax;
  }

  // Elementwise max with another table; for parallel calibration shards.
  void merge(const CalibrationTable& other) {
    for (const auto& [site, a] : other.amax_) {
      float& mine = amax_[site];
      mine = std::max(mine, a);
    }
  }

  bool contains(const std::string& site) const { return amax_.count(site) != 0; }
  std::size_t size() const { return amax_.size(); }
  bool empty() const { return amax_.empty(); }

  QuantScale entry(const std::string& site) const {
    auto it = amax_.find(site);
    if (it == amax_.end()) {
      throw CalibrationError("no calibration entry for site \"" + site + "\"");
    }
    return QuantScale{site, it->second, scale_from_amax(it->second)};
  }

  float scale(const std::string& site) const { return entry(site).scale; }
  float amax(const std::string& site) const { return entry(site).amax; }

  std::vector<QuantScale> entries() const {
    std::vector<QuantScale> out;
    for (const auto& [site, a] : amax_) out.push_back({site, a, scale_from_amax(a)});
    return out;
  }

  // Every site in `required` that has no entry, in the order given.
  std::vector<std::string> missing(const std::vector<std::string>& required) const {
    std::vector<std::string> out;
    for (const auto& s : required) {
      if (!contains(s)) out.push_back(s);
    }
    return out;
  }

  // Sites whose amax fell below the floor; their scale was clamped.
  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    for (const auto& [site, a] : amax_) {
      if (a < kMinAmax) {
        out.push_back("site " + site + " observed amax " + std::to_string(a) +
                      "; scale floored to 1e-8");
      }
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json sites = nlohmann::json::object();
    for (const auto& [site, a] : amax_) sites[site] = {{"amax", a}};
    return {{"fingerprint", fingerprint_}, {"sites", sites}};
  }

  static CalibrationTable from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("sites") || !j["sites"].is_object()) {
      throw FormatError("calibration document needs an object \"sites\"");
    }
    CalibrationTable t(j.value("fingerprint", std::string{}));
    for (const auto& [site, v] : j["sites"].items()) {
      if (!v.is_object() || !v.contains("amax") || !v["amax"].is_number()) {
        throw FormatError("calibration site \"" + site + "\" lacks a numeric amax");
      }
      t.set_amax(site, v["amax"].get<float>());
    }
    return t;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write calibration file " + path.string());
    out << to_json().dump(2) << '\n';
  }

  static CalibrationTable load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read calibration file " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  friend bool operator==(const CalibrationTable&, const CalibrationTable&) = default;

 private:
  std::string fingerprint_;
  std::map<std::string, float> amax_;
};

inline void minmax_observe(CalibrationTable& table, const std::string& site,
                           const TensorF& x) {
  table.observe(site, x);
}

// Occupancy of the 256 INT8 codes in a quantized tensor.
struct CodeUsageReport {
  std::string site;
  std::array<std::uint64_t, 256> histogram{};  // index = code + 128

  std::uint64_t count(int code) const {
    return histogram[static_cast<std::size_t>(code + 128)];
  }

  int used_count() const {
    return static_cast<int>(std::count_if(histogram.begin(), histogram.end(),
                                          [](std::uint64_t c) { return c != 0; }));
  }
  int unused_count() const { return 256 - used_count(); }
  double unused_percent() const { return unused_percent_of(unused_count()); }

  // 100 * unused / 256, rounded to two decimals.
  static double unused_percent_of(int unused) {
    return std::round(100.0 * unused / 256.0 * 100.0) / 100.0;
  }

  void add(std::span<const std::int8_t> codes) {
    for (std::int8_t c : codes) ++histogram[static_cast<std::size_t>(c + 128)];
  }
  void merge(const CodeUsageReport& other) {
    for (std::size_t i = 0; i < 256; ++i) histogram[i] += other.histogram[i];
  }
};

inline CodeUsageReport code_usage(const TensorI8& q, std::string site = {}) {
  CodeUsageReport r;
  r.site = std::move(site);
  r.add(q.data());
  return r;
}

}  // namespace mpinfer
