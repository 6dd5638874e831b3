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
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mpinfer/allocator.hpp"
#include "mpinfer/dataset.hpp"
#include "mpinfer/encoder.hpp"
#include "mpinfer/quant.hpp"
#include "mpinfer/tasks.hpp"

namespace mpinfer {

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

// Min-max calibration: FP forward passes with taps on, every site observed
// for every input.
inline CalibrationTable calibrate(const Encoder& encoder, const std::vector<EncodedInput>& inputs) {
  if (inputs.empty()) throw Error("calibration needs at least one input");
  CalibrationTable table(model_fingerprint(encoder.archive()));
  const auto plan = PrecisionPlan::all_fp(encoder.manifest().num_layers);
  for (const auto& in : inputs) {
    const EncoderOutput out = encoder.encode(plan, in, /*capture_taps=*/true);
    for (const auto& [site, tap] : out.taps) table.observe(site, tap.activation);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct TimingOptions {
  std::size_t repetitions = 30;
  std::size_t warmup = 5;
};

// Median wall time of fn over `repetitions` runs after `warmup` discarded runs.
inline double median_seconds(const std::function<void()>& fn, const TimingOptions& t) {
  for (std::size_t i = 0; i < t.warmup; ++i) fn();
  std::vector<double> samples;
  samples.reserve(std::max<std::size_t>(t.repetitions, 1));
  for (std::size_t i = 0; i < std::max<std::size_t>(t.repetitions, 1); ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto stop = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double>(stop - start).count());
  }
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  return n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

inline nlohmann::json environment_info(const TimingOptions& t) {
  return {{"repetitions", t.repetitions},
          {"warmup", t.warmup},
          {"threads", num_threads()},
          {"hardware_concurrency", std::thread::hardware_concurrency()},
          {"naive_kernels", naive_kernels()},
          {"compiler", __VERSION__}};
}

// ---------------------------------------------------------------------------
// Evaluation and profiles
// ---------------------------------------------------------------------------

struct EvalSet {
  std::vector<EncodedInput> inputs;
  std::vector<std::vector<int>> labels;
};

inline EvalSet prepare_eval_set(const Encoder& encoder, const std::vector<LabeledExample>& data) {
  EvalSet set;
  std::vector<TextPair> texts;
  for (const auto& ex : data) {
    texts.push_back(ex.text);
    set.labels.push_back(ex.labels);
  }
  set.inputs = encode_batch(encoder.archive().vocab, texts, num_threads());
  return set;
}

// Label accuracy for classification/matching; per-position accuracy over all
// gold labels for tagging (positions past attention_length count as wrong).
inline double evaluate_accuracy(const Encoder& encoder, const PrecisionPlan& plan,
                                const EvalSet& set) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < set.inputs.size(); ++i) {
    const TaskResult r = run_task(encoder, plan, set.inputs[i]);
    const auto& gold = set.labels[i];
    if (r.per_token) {
      for (std::size_t t = 0; t < gold.size(); ++t) {
        if (t < r.label_ids.size() && r.label_ids[t] == gold[t]) ++correct;
      }
      total += gold.size();
    } else {
      correct += (!r.label_ids.empty() && r.label_ids[0] == gold[0]) ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

// Operation-counter cost of one encoder pass over `in` under `plan`.
inline KernelCounters pass_cost(const Encoder& encoder, const PrecisionPlan& plan,
                                const EncodedInput& in) {
  CounterScope scope;
  (void)encoder.encode(plan, in);
  return scope.delta();
}

struct ProfileOptions {
  std::size_t layer_step = 2;
  TimingOptions timing;
};

inline std::vector<std::size_t> sweep_counts(std::size_t num_layers, std::size_t step) {
  if (step == 0) throw ConfigError("layer step must be >= 1");
  std::vector<std::size_t> ks;
  for (std::size_t k = 0; k <= num_layers; k += step) ks.push_back(k);
  if (ks.back() != num_layers) ks.push_back(num_layers);
  return ks;
}

// Sweeps prefix plans k = 0, step, 2*step, ..., L. Latency is the median time
// of encoder passes over the whole eval set; accuracy runs the full task.
inline Profile build_profile(const Encoder& encoder, PlanMode mode, const EvalSet& set,
                             const ProfileOptions& opts = {}) {
  if (mode == PlanMode::kFP) throw ConfigError("profile mode must be fully-quant or ffn-only");
  if (set.inputs.empty()) throw ConfigError("evaluation set is empty");
  const std::size_t L = encoder.manifest().num_layers;
  Profile p;
  p.mode = mode;
  p.num_layers = L;
  p.env = environment_info(opts.timing);
  p.env["layer_step"] = opts.layer_step;
  p.env["eval_examples"] = set.inputs.size();
  for (std::size_t k : sweep_counts(L, opts.layer_step)) {
    const PrecisionPlan plan = PrecisionPlan::prefix(mode, L, k);
    encoder.check_plan(plan);
    ProfilePoint pt;
    pt.quantized_layers = k;
    pt.accuracy = evaluate_accuracy(encoder, plan, set);
    pt.latency_s = median_seconds(
        [&] {
          for (const auto& in : set.inputs) (void)encoder.encode(plan, in);
        },
        opts.timing);
    const KernelCounters c = pass_cost(encoder, plan, set.inputs.front());
    pt.int8_gemms = c.i8_gemms;
    pt.fp32_gemms = c.f32_gemms;
    pt.gemm_bytes = c.gemm_bytes();
    p.points.push_back(pt);
  }
  const double base = p.points.front().latency_s;
  for (auto& pt : p.points) pt.speedup = base / pt.latency_s;
  p.points.front().speedup = 1.0;
  return p;
}

// Tradeoff table in the layout of the published results: quantized MHA and
// FFN counts as k/L, accuracy and speedup to four decimals.
inline std::string render_profile_table(const Profile& p) {
  std::ostringstream out;
  out << "mode: " << to_string(p.mode) << "\n";
  char line[128];
  std::snprintf(line, sizeof line, "%-14s %-14s %-9s %s\n", "Quantized MHA", "Quantized FFN",
                "Accuracy", "Speedup");
  out << line;
  for (const auto& pt : p.points) {
    const std::string ffn = std::to_string(pt.quantized_layers) + "/" + std::to_string(p.num_layers);
    const std::string mha = p.mode == PlanMode::kFullyQuant
                                ? ffn
                                : "0/" + std::to_string(p.num_layers);
    std::snprintf(line, sizeof line, "%-14s %-14s %-9.4f %.4f\n", mha.c_str(), ffn.c_str(),
                  pt.accuracy, pt.speedup);
    out << line;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Code-usage analysis
// ---------------------------------------------------------------------------

// '*' matches any run of characters.
inline bool glob_match(std::string_view pattern, std::string_view s) {
  if (pattern.empty()) return s.empty();
  if (pattern[0] == '*') {
    for (std::size_t i = 0; i <= s.size(); ++i) {
      if (glob_match(pattern.substr(1), s.substr(i))) return true;
    }
    return false;
  }
  return !s.empty() && pattern[0] == s[0] && glob_match(pattern.substr(1), s.substr(1));
}

// Sites quantized under `plan` that match any of `patterns` (all when empty).
// A pattern matching nothing is an error listing the valid sites.
inline std::vector<std::string> select_sites(const PrecisionPlan& plan,
                                             const std::vector<std::string>& patterns) {
  std::vector<std::string> valid = sites::required(plan);
  std::sort(valid.begin(), valid.end());
  valid.erase(std::unique(valid.begin(), valid.end()), valid.end());
  if (patterns.empty()) return valid;
  std::vector<std::string> out;
  for (const auto& pat : patterns) {
    bool hit = false;
    for (const auto& s : valid) {
      if (glob_match(pat, s)) {
        hit = true;
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
      }
    }
    if (!hit) {
      std::string msg = "site filter \"" + pat + "\" matches no quantized site; valid sites:";
      for (const auto& s : valid) msg += " " + s;
      throw ConfigError(msg);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Quantized inference with taps; code histograms summed over all inputs
// before unused codes are counted.
inline std::map<std::string, CodeUsageReport> analyze_code_usage(
    const Encoder& encoder, const PrecisionPlan& plan, const std::vector<EncodedInput>& inputs,
    const std::vector<std::string>& patterns = {}) {
  encoder.check_plan(plan);
  const auto selected = select_sites(plan, patterns);
  std::map<std::string, CodeUsageReport> reports;
  for (const auto& s : selected) reports[s].site = s;
  for (const auto& in : inputs) {
    const EncoderOutput out = encoder.encode(plan, in, /*capture_taps=*/true);
    for (const auto& s : selected) {
      auto it = out.taps.find(s);
      if (it != out.taps.end() && it->second.codes) reports[s].add(it->second.codes->data());
    }
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

enum class RunMode { kFp32, kFp16, kFullyQuant, kFfnOnly };

inline const char* to_string(RunMode m) {
  switch (m) {
    case RunMode::kFp32: return "fp32";
    case RunMode::kFp16: return "fp16";
    case RunMode::kFullyQuant: return "fully-quant";
    case RunMode::kFfnOnly: return "ffn-only";
  }
  return "?";
}

inline RunMode run_mode_from_string(const std::string& s) {
  if (s == "fp32") return RunMode::kFp32;
  if (s == "fp16") return RunMode::kFp16;
  if (s == "fully-quant") return RunMode::kFullyQuant;
  if (s == "ffn-only") return RunMode::kFfnOnly;
  throw ConfigError("unknown mode \"" + s + "\" (expected fp32, fp16, fully-quant, ffn-only)");
}

inline PrecisionPlan make_plan(RunMode mode, std::size_t num_layers, std::size_t quant_layers) {
  switch (mode) {
    case RunMode::kFp32: return PrecisionPlan::all_fp(num_layers);
    case RunMode::kFp16: {
      auto p = PrecisionPlan::all_fp(num_layers);
      p.fp16_storage = true;
      return p;
    }
    case RunMode::kFullyQuant:
      return PrecisionPlan::prefix(PlanMode::kFullyQuant, num_layers, quant_layers);
    case RunMode::kFfnOnly:
      return PrecisionPlan::prefix(PlanMode::kFfnOnly, num_layers, quant_layers);
  }
  throw ConfigError("unknown mode");
}

struct BenchRow {
  RunMode mode;
  std::size_t batch;
  std::size_t seq_len;
  double latency_s;
  double speedup;  // fp32 latency of the same shape / latency
  KernelCounters cost;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::vector<std::string> warnings;
};

// Random-id encoder inputs with full attention.
inline std::vector<EncodedInput> random_inputs(const ModelManifest& m, std::size_t count,
                                               std::size_t seq_len, std::uint32_t seed) {
  if (seq_len == 0 || seq_len > m.max_position) {
    throw ConfigError(detail::concat("sequence length ", seq_len, " outside [1, ",
                                     m.max_position, "]"));
  }
  std::mt19937 rng(seed);
  std::uniform_int_distribution<std::int32_t> ids(0, static_cast<std::int32_t>(m.vocab_size) - 1);
  std::vector<EncodedInput> out(count);
  for (auto& in : out) {
    in.token_ids.resize(seq_len);
    for (auto& id : in.token_ids) id = ids(rng);
    in.segment_ids.assign(seq_len, 0);
    in.attention_length = seq_len;
  }
  return out;
}

// Encoder-only timing over the batch x sequence grid for each mode.
inline BenchReport bench(const Encoder& encoder, const std::vector<RunMode>& modes,
                         std::size_t quant_layers, const std::vector<std::size_t>& batch_sizes,
                         const std::vector<std::size_t>& seq_lens, const TimingOptions& timing) {
  const auto& m = encoder.manifest();
  BenchReport report;
  for (std::size_t b : batch_sizes) {
    for (std::size_t s : seq_lens) {
      const auto inputs = random_inputs(m, b, s, 1234u + static_cast<std::uint32_t>(b * 7919 + s));
      std::map<RunMode, double> latency;
      std::vector<BenchRow> rows;
      auto time_mode = [&](RunMode mode) {
        const PrecisionPlan plan = make_plan(mode, m.num_layers, quant_layers);
        const double t = median_seconds(
            [&] {
              for (const auto& in : inputs) (void)encoder.encode(plan, in);
            },
            timing);
        latency[mode] = t;
        KernelCounters cost;
        for (const auto& in : inputs) {
          const KernelCounters c = pass_cost(encoder, plan, in);
          cost.f32_gemms += c.f32_gemms;
          cost.i8_gemms += c.i8_gemms;
          cost.f32_gemm_bytes += c.f32_gemm_bytes;
          cost.i8_gemm_bytes += c.i8_gemm_bytes;
        }
        return BenchRow{mode, b, s, t, 1.0, cost};
      };
      const double fp32 = time_mode(RunMode::kFp32).latency_s;
      for (RunMode mode : modes) {
        BenchRow row = mode == RunMode::kFp32 ? BenchRow{mode, b, s, fp32, 1.0, {}}
                                              : time_mode(mode);
        if (mode == RunMode::kFp32) {
          for (const auto& in : inputs) {
            const KernelCounters c = pass_cost(encoder, make_plan(mode, m.num_layers, 0), in);
            row.cost.f32_gemms += c.f32_gemms;
            row.cost.f32_gemm_bytes += c.f32_gemm_bytes;
          }
        }
        row.speedup = fp32 / row.latency_s;
        if ((mode == RunMode::kFullyQuant || mode == RunMode::kFfnOnly) && quant_layers > 0 &&
            m.hidden >= 256 && s >= 128 && row.latency_s > fp32) {
          report.warnings.push_back(detail::concat(
              to_string(mode), " with ", quant_layers, " quantized layers at batch ", b,
              ", seq ", s, " is slower than fp32 (", row.latency_s, " s vs ", fp32, " s)"));
        }
        report.rows.push_back(row);
      }
    }
  }
  return report;
}

}  // namespace mpinfer
