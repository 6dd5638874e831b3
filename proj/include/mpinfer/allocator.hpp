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
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpinfer/encoder.hpp"
#include "mpinfer/errors.hpp"

namespace mpinfer {

struct ProfilePoint {
  std::size_t quantized_layers = 0;
  double accuracy = 0.0;
  double latency_s = 0.0;  // per batch, lower is better
  double speedup = 1.0;    // baseline latency / latency
  // Operation-counter cost of one encoder pass under this point's plan.
  std::optional<std::uint64_t> int8_gemms;
  std::optional<std::uint64_t> fp32_gemms;
  std::optional<std::uint64_t> gemm_bytes;

  friend bool operator==(const ProfilePoint&, const ProfilePoint&) = default;
};

// Points sorted by quantized_layers; index 0 is the unquantized baseline.
struct Profile {
  PlanMode mode = PlanMode::kFfnOnly;
  std::size_t num_layers = 0;
  std::vector<ProfilePoint> points;
  nlohmann::json env = nlohmann::json::object();

  void validate() const {
    if (points.empty()) throw FormatError("profile has no points");
    if (mode == PlanMode::kFP) throw FormatError("profile mode must be fully-quant or ffn-only");
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& p = points[i];
      if (!(p.latency_s > 0.0)) throw FormatError(detail::concat("point ", i, ": latency must be > 0"));
      if (!(p.speedup > 0.0)) throw FormatError(detail::concat("point ", i, ": speedup must be > 0"));
      if (i > 0 && p.quantized_layers <= points[i - 1].quantized_layers) {
        throw FormatError("profile points must have strictly increasing quantized_layers");
      }
    }
  }

  nlohmann::json to_json() const {
    auto point = [](const ProfilePoint& p) {
      nlohmann::json j = {{"quantized_layers", p.quantized_layers},
                          {"accuracy", p.accuracy},
                          {"latency_s", p.latency_s},
                          {"speedup", p.speedup}};
      if (p.int8_gemms) j["int8_gemms"] = *p.int8_gemms;
      if (p.fp32_gemms) j["fp32_gemms"] = *p.fp32_gemms;
      if (p.gemm_bytes) j["gemm_bytes"] = *p.gemm_bytes;
      return j;
    };
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : points) pts.push_back(point(p));
    return {{"mode", to_string(mode)},
            {"num_layers", num_layers},
            {"baseline", points.empty() ? nlohmann::json() : point(points.front())},
            {"points", pts},
            {"env", env}};
  }

  static Profile from_json(const nlohmann::json& j) {
    Profile p;
    try {
      p.mode = plan_mode_from_string(j.at("mode").get<std::string>());
      for (const auto& e : j.at("points")) {
        ProfilePoint pt;
        pt.quantized_layers = e.at("quantized_layers").get<std::size_t>();
        pt.accuracy = e.at("accuracy").get<double>();
        pt.latency_s = e.at("latency_s").get<double>();
        pt.speedup = e.at("speedup").get<double>();
        if (e.contains("int8_gemms")) pt.int8_gemms = e["int8_gemms"].get<std::uint64_t>();
        if (e.contains("fp32_gemms")) pt.fp32_gemms = e["fp32_gemms"].get<std::uint64_t>();
        if (e.contains("gemm_bytes")) pt.gemm_bytes = e["gemm_bytes"].get<std::uint64_t>();
        p.points.push_back(pt);
      }
      p.num_layers = j.value("num_layers", p.points.empty() ? 0 : p.points.back().quantized_layers);
      if (j.contains("env")) p.env = j["env"];
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("profile: ") + e.what());
    } catch (const ConfigError& e) {
      throw FormatError(std::string("profile: ") + e.what());
    }
    p.validate();
    return p;
  }
};

// Which field Algorithm-style decay rates divide by.
enum class LatencySemantics { kLatency, kSpeedup };

inline LatencySemantics latency_semantics_from_string(const std::string& s) {
  if (s == "latency") return LatencySemantics::kLatency;
  if (s == "speedup") return LatencySemantics::kSpeedup;
  throw ConfigError("latency semantics must be \"latency\" or \"speedup\", got \"" + s + "\"");
}

struct DecayAwareResult {
  std::size_t index = 0;
  std::vector<std::string> warnings;
};

// Accuracy-decay-aware allocation. Walks the profile keeping a record point;
// the decay rate of candidate i is (A_i - A_rec) / (L_i - L_rec). A candidate
// becomes the record when its rate is negative (accuracy and latency move in
// opposite directions) or smaller than the smallest rate seen so far. The
// last record is the answer.
//
// With kSpeedup the speedup column stands in for L; accuracy normally falls
// while speedup rises, so every rate is negative and the walk ends on the
// last point.
inline DecayAwareResult allocate_decay_aware(const Profile& p,
                                             LatencySemantics sem = LatencySemantics::kLatency) {
  if (p.points.empty()) throw FormatError("profile has no points");
  auto lat = [&](std::size_t i) {
    return sem == LatencySemantics::kLatency ? p.points[i].latency_s : p.points[i].speedup;
  };
  DecayAwareResult r;
  double dr_min = std::numeric_limits<double>::max();
  double a_rec = p.points[0].accuracy;
  double l_rec = lat(0);
  for (std::size_t i = 1; i < p.points.size(); ++i) {
    const double dl = lat(i) - l_rec;
    if (dl == 0.0) {
      r.warnings.push_back(detail::concat("point ", i, " (", p.points[i].quantized_layers,
                                          " layers) has the same latency as the record; skipped"));
      continue;
    }
    const double dr = (p.points[i].accuracy - a_rec) / dl;
    if (dr < 0.0 || dr < dr_min) {
      dr_min = dr;
      a_rec = p.points[i].accuracy;
      l_rec = lat(i);
      r.index = i;
    }
  }
  return r;
}

// Highest accuracy among points strictly under max_latency.
inline std::size_t select_by_latency_threshold(const Profile& p, double max_latency) {
  std::optional<std::size_t> best;
  double min_lat = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.points.size(); ++i) {
    min_lat = std::min(min_lat, p.points[i].latency_s);
    if (p.points[i].latency_s < max_latency &&
        (!best || p.points[i].accuracy > p.points[*best].accuracy)) {
      best = i;
    }
  }
  if (!best) {
    throw InfeasibleError(detail::concat("no setting runs under ", max_latency,
                                         " s; minimum achievable latency is ", min_lat, " s"),
                          min_lat);
  }
  return *best;
}

// Lowest latency among points strictly above min_accuracy.
inline std::size_t select_by_accuracy_threshold(const Profile& p, double min_accuracy) {
  std::optional<std::size_t> best;
  double max_acc = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.points.size(); ++i) {
    max_acc = std::max(max_acc, p.points[i].accuracy);
    if (p.points[i].accuracy > min_accuracy &&
        (!best || p.points[i].latency_s < p.points[*best].latency_s)) {
      best = i;
    }
  }
  if (!best) {
    throw InfeasibleError(detail::concat("no setting exceeds accuracy ", min_accuracy,
                                         "; maximum achievable accuracy is ", max_acc),
                          max_acc);
  }
  return *best;
}

// Top settings by (speedup gain) / (accuracy loss) against the baseline.
// Points that lost no accuracy come first, fastest first.
inline std::vector<std::size_t> rank_by_ratio(const Profile& p, std::size_t top_n = 5) {
  if (p.points.empty()) throw FormatError("profile has no points");
  const auto& base = p.points.front();
  struct Ranked {
    std::size_t index;
    bool free;
    double key;
  };
  std::vector<Ranked> ranked;
  for (std::size_t i = 1; i < p.points.size(); ++i) {
    const double loss = base.accuracy - p.points[i].accuracy;
    if (loss <= 0.0) {
      ranked.push_back({i, true, p.points[i].speedup});
    } else {
      ranked.push_back({i, false, (p.points[i].speedup - base.speedup) / loss});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.free != b.free) return a.free;
    return a.key > b.key;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ranked.size() && out.size() < top_n; ++i) {
    out.push_back(ranked[i].index);
  }
  return out;
}

}  // namespace mpinfer
