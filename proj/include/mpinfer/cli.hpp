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

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpinfer/allocator.hpp"
#include "mpinfer/dataset.hpp"
#include "mpinfer/encoder.hpp"
#include "mpinfer/model_io.hpp"
#include "mpinfer/profiler.hpp"
#include "mpinfer/tasks.hpp"

namespace mpinfer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Bad flag values detected after parsing (e.g. --quant-layers above L).
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Config {
  std::string model_dir;
  std::string mode = "fp32";
  std::string quant_layers = "all";
  int threads = 1;
  std::string format = "text";

  std::string data;
  std::vector<std::string> texts;
  std::string eval;
  std::size_t step = 2;
  std::string out;
  std::string profile;
  std::optional<double> max_latency;
  std::optional<double> min_accuracy;
  std::string latency_semantics = "latency";
  std::vector<std::string> sites;
  std::vector<std::size_t> batch_sizes{1, 8};
  std::vector<std::size_t> seq_lens{32, 128};
  std::size_t repetitions = 30;
  std::size_t warmup = 5;
};

namespace detail {

inline std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::size_t resolve_quant_layers(const Config& c, std::size_t num_layers) {
  if (c.quant_layers == "all") return num_layers;
  std::size_t k = 0;
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(c.quant_layers, &pos);
    if (pos != c.quant_layers.size() || v < 0) throw std::invalid_argument("");
    k = static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw UsageError("--quant-layers must be a non-negative integer or \"all\", got \"" +
                     c.quant_layers + "\"");
  }
  if (k > num_layers) {
    throw UsageError(mpinfer::detail::concat("--quant-layers ", k, " exceeds the model's ",
                                             num_layers, " layers"));
  }
  return k;
}

inline void require_model(const Config& c) {
  if (c.model_dir.empty()) throw UsageError("--model is required");
}

inline std::shared_ptr<const ModelArchive> load_model(const Config& c) {
  require_model(c);
  return std::make_shared<const ModelArchive>(load_archive(c.model_dir, {.permissive = true}));
}

inline PrecisionPlan plan_for(const Config& c, const ModelManifest& m) {
  return make_plan(run_mode_from_string(c.mode), m.num_layers, resolve_quant_layers(c, m.num_layers));
}

// Texts from --data and --text; --text splits "a<TAB>b" for matching models.
inline std::vector<TextPair> gather_texts(const Config& c, Task task) {
  std::vector<TextPair> texts;
  if (!c.data.empty()) texts = parse_raw_texts(c.data, task);
  for (const auto& t : c.texts) {
    const auto tab = t.find('\t');
    if (task == Task::kTextMatching) {
      if (tab == std::string::npos) throw InputError("matching input needs \"text_a<TAB>text_b\"");
      texts.push_back({t.substr(0, tab), t.substr(tab + 1)});
    } else {
      texts.push_back({t, std::nullopt});
    }
  }
  if (texts.empty()) throw UsageError("no input: pass --data FILE or --text TEXT");
  return texts;
}

inline void print_warnings(const std::vector<std::string>& ws, std::ostream& err) {
  for (const auto& w : ws) err << "warning: " << w << "\n";
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int cmd_calibrate(const Config& c, std::ostream& out, std::ostream& err) {
  const auto archive = load_model(c);
  if (c.data.empty()) throw UsageError("calibrate needs --data FILE");
  const Encoder encoder(archive, CalibrationTable{});
  const auto texts = parse_raw_texts(c.data, archive->manifest.task);
  const auto inputs = encode_batch(archive->vocab, texts, c.threads);
  const CalibrationTable table = calibrate(encoder, inputs);
  print_warnings(table.warnings(), err);
  const std::filesystem::path dest =
      c.out.empty() ? std::filesystem::path(c.model_dir) / "calibration.json"
                    : std::filesystem::path(c.out);
  table.save(dest);
  if (c.format == "json") {
    out << table.to_json().dump(2) << "\n";
  } else {
    out << "calibrated " << table.size() << " sites over " << inputs.size() << " inputs -> "
        << dest.string() << "\n";
  }
  return kExitOk;
}

inline int cmd_infer(const Config& c, std::ostream& out, std::ostream&) {
  const auto archive = load_model(c);
  const Encoder encoder(archive);
  const PrecisionPlan plan = plan_for(c, archive->manifest);
  encoder.check_plan(plan);
  const auto texts = gather_texts(c, archive->manifest.task);
  const auto inputs = encode_batch(archive->vocab, texts, c.threads);
  const std::size_t n_labels = archive->manifest.num_labels;

  nlohmann::json arr = nlohmann::json::array();
  if (c.format == "csv") out << "index,labels,scores\n";
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const TaskResult r = run_task(encoder, plan, inputs[i]);
    std::vector<double> chosen;
    for (std::size_t p = 0; p < r.label_ids.size(); ++p) {
      chosen.push_back(r.scores[p * n_labels + static_cast<std::size_t>(r.label_ids[p])]);
    }
    if (c.format == "json") {
      nlohmann::json j = {{"index", i}, {"labels", r.label_ids}, {"per_token", r.per_token}};
      nlohmann::json sc = nlohmann::json::array();
      for (double s : chosen) sc.push_back(std::stod(fmt(s, 6)));
      j["scores"] = sc;
      arr.push_back(j);
      continue;
    }
    std::string labels, scores;
    for (std::size_t p = 0; p < r.label_ids.size(); ++p) {
      if (p) {
        labels += ' ';
        scores += ' ';
      }
      labels += std::to_string(r.label_ids[p]);
      scores += fmt(chosen[p], 6);
    }
    if (c.format == "csv") {
      out << i << "," << labels << "," << scores << "\n";
    } else {
      out << i << "\t" << (r.per_token ? "tags=" : "label=") << labels << "\tscore=" << scores
          << "\n";
    }
  }
  if (c.format == "json") out << arr.dump(2) << "\n";
  return kExitOk;
}

inline int cmd_profile(const Config& c, std::ostream& out, std::ostream&) {
  const auto archive = load_model(c);
  if (c.eval.empty()) throw UsageError("profile needs --eval FILE");
  PlanMode mode;
  if (c.mode == "fully-quant") {
    mode = PlanMode::kFullyQuant;
  } else if (c.mode == "ffn-only") {
    mode = PlanMode::kFfnOnly;
  } else {
    throw UsageError("profile needs --mode fully-quant or --mode ffn-only");
  }
  const Encoder encoder(archive);
  const auto data = parse_eval_file(c.eval, archive->manifest);
  const EvalSet set = prepare_eval_set(encoder, data);
  ProfileOptions opts;
  opts.layer_step = c.step;
  opts.timing = {c.repetitions, c.warmup};
  const Profile p = build_profile(encoder, mode, set, opts);
  if (!c.out.empty()) {
    std::ofstream f(c.out, std::ios::binary);
    if (!f) throw Error("cannot write " + c.out);
    f << p.to_json().dump(2) << "\n";
  }
  if (c.format == "json") {
    out << p.to_json().dump(2) << "\n";
  } else if (c.format == "csv") {
    out << "quantized_layers,accuracy,latency_s,speedup,int8_gemms,fp32_gemms,gemm_bytes\n";
    for (const auto& pt : p.points) {
      out << pt.quantized_layers << "," << fmt(pt.accuracy) << "," << pt.latency_s << ","
          << fmt(pt.speedup) << "," << pt.int8_gemms.value_or(0) << ","
          << pt.fp32_gemms.value_or(0) << "," << pt.gemm_bytes.value_or(0) << "\n";
    }
  } else {
    out << render_profile_table(p);
  }
  return kExitOk;
}

inline nlohmann::json point_json(const Profile& p, std::size_t i, const char* rule) {
  const auto& pt = p.points[i];
  return {{"rule", rule},
          {"index", i},
          {"quantized_layers", pt.quantized_layers},
          {"accuracy", pt.accuracy},
          {"latency_s", pt.latency_s},
          {"speedup", pt.speedup}};
}

inline int cmd_recommend(const Config& c, std::ostream& out, std::ostream& err) {
  if (c.profile.empty()) throw UsageError("recommend needs a profile file");
  if (c.max_latency && c.min_accuracy) {
    throw UsageError("--max-latency and --min-accuracy are mutually exclusive");
  }
  const LatencySemantics sem = [&] {
    try {
      return latency_semantics_from_string(c.latency_semantics);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }();
  const Profile p = Profile::from_json(mpinfer::detail::read_json(c.profile));

  std::vector<nlohmann::json> picks;
  if (c.max_latency) {
    picks.push_back(point_json(p, select_by_latency_threshold(p, *c.max_latency),
                               "latency-threshold"));
  } else if (c.min_accuracy) {
    picks.push_back(point_json(p, select_by_accuracy_threshold(p, *c.min_accuracy),
                               "accuracy-threshold"));
  } else {
    for (std::size_t i : rank_by_ratio(p, 5)) picks.push_back(point_json(p, i, "ratio-top5"));
    const DecayAwareResult d = allocate_decay_aware(p, sem);
    print_warnings(d.warnings, err);
    picks.push_back(point_json(p, d.index, sem == LatencySemantics::kLatency
                                               ? "decay-aware(latency)"
                                               : "decay-aware(speedup)"));
  }

  if (c.format == "json") {
    out << nlohmann::json{{"mode", to_string(p.mode)},
                          {"num_layers", p.num_layers},
                          {"recommendations", picks}}
               .dump(2)
        << "\n";
  } else if (c.format == "csv") {
    out << "rule,quantized_layers,accuracy,latency_s,speedup\n";
    for (const auto& j : picks) {
      out << j["rule"].get<std::string>() << "," << j["quantized_layers"] << ","
          << fmt(j["accuracy"].get<double>()) << "," << j["latency_s"] << "," << fmt(j["speedup"].get<double>()) << "\n";
    }
  } else {
    for (const auto& j : picks) {
      out << j["rule"].get<std::string>() << ": " << j["quantized_layers"] << "/" << p.num_layers
          << " layers  accuracy " << fmt(j["accuracy"].get<double>()) << "  speedup " << fmt(j["speedup"].get<double>())
          << "\n";
    }
  }
  return kExitOk;
}

inline int cmd_analyze_quant(const Config& c, std::ostream& out, std::ostream&) {
  const auto archive = load_model(c);
  if (c.data.empty() && c.texts.empty()) throw UsageError("analyze-quant needs --data FILE");
  const Encoder encoder(archive);
  Config qc = c;
  if (qc.mode == "fp32" || qc.mode == "fp16") qc.mode = "fully-quant";
  const PrecisionPlan plan = plan_for(qc, archive->manifest);
  encoder.check_plan(plan);
  const auto texts = gather_texts(c, archive->manifest.task);
  const auto inputs = encode_batch(archive->vocab, texts, c.threads);
  const auto reports = analyze_code_usage(encoder, plan, inputs, c.sites);

  if (c.format == "json") {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [site, r] : reports) {
      j[site] = {{"histogram", r.histogram},
                 {"used", r.used_count()},
                 {"unused", r.unused_count()},
                 {"unused_percent", r.unused_percent()}};
    }
    out << j.dump(2) << "\n";
  } else if (c.format == "csv") {
    out << "site,used,unused,unused_percent";
    for (int code = -128; code < 128; ++code) out << ",c" << code;
    out << "\n";
    for (const auto& [site, r] : reports) {
      out << site << "," << r.used_count() << "," << r.unused_count() << ","
          << fmt(r.unused_percent(), 2);
      for (auto n : r.histogram) out << "," << n;
      out << "\n";
    }
  } else {
    for (const auto& [site, r] : reports) {
      out << site << "  used " << r.used_count() << "  unused " << r.unused_count() << " ("
          << fmt(r.unused_percent(), 2) << "%)\n";
    }
  }
  return kExitOk;
}

inline int cmd_bench(const Config& c, std::ostream& out, std::ostream& err,
                     bool mode_given) {
  const auto archive = load_model(c);
  const auto& m = archive->manifest;
  const std::size_t k = resolve_quant_layers(c, m.num_layers);
  std::vector<RunMode> modes{RunMode::kFp32, RunMode::kFp16, RunMode::kFullyQuant,
                             RunMode::kFfnOnly};
  if (mode_given) {
    modes = {RunMode::kFp32};
    const RunMode chosen = run_mode_from_string(c.mode);
    if (chosen != RunMode::kFp32) modes.push_back(chosen);
  }
  // Benchmarks need scales only; without a shipped table, calibrate on the
  // random inputs of the smallest grid shape.
  std::optional<CalibrationTable> calib = archive->calibration;
  if (!calib) {
    Encoder fp(archive, CalibrationTable{});
    calib = calibrate(fp, random_inputs(m, 4, std::min<std::size_t>(m.max_position, 32), 99u));
    err << "note: model has no calibration table; calibrated on random inputs\n";
  }
  const Encoder encoder(archive, calib);
  const BenchReport rep = bench(encoder, modes, k, c.batch_sizes, c.seq_lens,
                                {c.repetitions, c.warmup});
  print_warnings(rep.warnings, err);

  if (c.format == "json") {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rep.rows) {
      arr.push_back({{"mode", to_string(r.mode)},
                     {"batch", r.batch},
                     {"seq_len", r.seq_len},
                     {"latency_s", r.latency_s},
                     {"speedup", r.speedup},
                     {"int8_gemms", r.cost.i8_gemms},
                     {"fp32_gemms", r.cost.f32_gemms},
                     {"gemm_bytes", r.cost.gemm_bytes()}});
    }
    out << arr.dump(2) << "\n";
    return kExitOk;
  }
  const bool csv = c.format == "csv";
  if (csv) {
    out << "mode,batch,seq_len,latency_s,speedup,int8_gemms,fp32_gemms,gemm_bytes\n";
  } else {
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %6s %8s %12s %8s %8s %8s %14s\n", "mode", "batch",
                  "seq_len", "latency_s", "speedup", "int8", "fp32", "gemm_bytes");
    out << line;
  }
  for (const auto& r : rep.rows) {
    char line[200];
    std::snprintf(line, sizeof line,
                  csv ? "%s,%zu,%zu,%.6g,%.4f,%llu,%llu,%llu\n"
                      : "%-12s %6zu %8zu %12.6g %8.4f %8llu %8llu %14llu\n",
                  to_string(r.mode), r.batch, r.seq_len, r.latency_s, r.speedup,
                  static_cast<unsigned long long>(r.cost.i8_gemms),
                  static_cast<unsigned long long>(r.cost.f32_gemms),
                  static_cast<unsigned long long>(r.cost.gemm_bytes()));
    out << line;
  }
  return kExitOk;
}

}  // namespace detail

// Parses argv and runs one subcommand. Returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Config c;
  CLI::App app{"Mixed-precision transformer encoder inference", "mpinfer"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  app.add_option("--model", c.model_dir, "Model archive directory");
  auto* mode_opt = app.add_option("--mode", c.mode, "Precision mode")
                       ->check(CLI::IsMember({"fp32", "fp16", "fully-quant", "ffn-only"}));
  app.add_option("--quant-layers", c.quant_layers, "Quantized layer count K, or \"all\"");
  app.add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--format", c.format, "Output format")
      ->check(CLI::IsMember({"text", "json", "csv"}));

  auto* calib = app.add_subcommand("calibrate", "Min-max calibration over raw texts");
  calib->add_option("--data", c.data, "Raw text file")->required();
  calib->add_option("--out", c.out, "Output calibration.json");

  auto* infer = app.add_subcommand("infer", "Run the task head on raw texts");
  infer->add_option("--data", c.data, "Raw text file");
  infer->add_option("--text", c.texts, "Inline input text (repeatable)");

  auto* profile = app.add_subcommand("profile", "Accuracy/speedup sweep over k");
  profile->add_option("--eval", c.eval, "Labeled TSV eval file")->required();
  profile->add_option("--step", c.step, "Layer step")->check(CLI::PositiveNumber);
  profile->add_option("--out", c.out, "Profile JSON output");

  auto* recommend = app.add_subcommand("recommend", "Pick a quantized layer count");
  recommend->add_option("profile,--profile", c.profile, "Profile JSON")->required();
  auto* max_lat = recommend->add_option("--max-latency", c.max_latency, "Latency bound (s)");
  auto* min_acc = recommend->add_option("--min-accuracy", c.min_accuracy, "Accuracy bound");
  max_lat->excludes(min_acc);
  recommend->add_option("--latency-semantics", c.latency_semantics,
                        "Decay-rate denominator: latency or speedup")
      ->check(CLI::IsMember({"latency", "speedup"}));

  auto* analyze = app.add_subcommand("analyze-quant", "INT8 code usage per site");
  analyze->add_option("--data", c.data, "Raw text file");
  analyze->add_option("--text", c.texts, "Inline input text (repeatable)");
  analyze->add_option("--sites", c.sites, "Site globs, e.g. L*.attn.softmax")->delimiter(',');

  auto* benchc = app.add_subcommand("bench", "Encoder latency grid per mode");
  benchc->add_option("--batch-sizes", c.batch_sizes, "Batch sizes")->delimiter(',');
  benchc->add_option("--seq-lens", c.seq_lens, "Sequence lengths")->delimiter(',');

  for (auto* sub : {profile, benchc}) {
    sub->add_option("--repetitions", c.repetitions, "Timed runs")->check(CLI::PositiveNumber);
    sub->add_option("--warmup", c.warmup, "Discarded runs");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  const int prev_threads = num_threads();
  set_num_threads(c.threads);
  struct Restore {
    int n;
    ~Restore() { set_num_threads(n); }
  } restore{prev_threads};

  try {
    if (*calib) return detail::cmd_calibrate(c, out, err);
    if (*infer) return detail::cmd_infer(c, out, err);
    if (*profile) return detail::cmd_profile(c, out, err);
    if (*recommend) return detail::cmd_recommend(c, out, err);
    if (*analyze) return detail::cmd_analyze_quant(c, out, err);
    if (*benchc) return detail::cmd_bench(c, out, err, mode_opt->count() > 0);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InfeasibleError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace mpinfer::cli
