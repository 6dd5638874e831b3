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
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mpinfer/errors.hpp"
#include "mpinfer/kernels.hpp"
#include "mpinfer/model_io.hpp"
#include "mpinfer/quant.hpp"
#include "mpinfer/tensor.hpp"
#include "mpinfer/tokenizer.hpp"

namespace mpinfer {

// ---------------------------------------------------------------------------
// Precision plans
// ---------------------------------------------------------------------------

enum class PlanMode { kFP, kFullyQuant, kFfnOnly };
enum class LayerPrecision { kFP, kFfnOnlyInt8, kFullInt8 };

inline const char* to_string(PlanMode m) {
  switch (m) {
    case PlanMode::kFP: return "fp";
    case PlanMode::kFullyQuant: return "fully-quant";
    case PlanMode::kFfnOnly: return "ffn-only";
  }
  return "?";
}

inline PlanMode plan_mode_from_string(const std::string& s) {
  if (s == "fp") return PlanMode::kFP;
  if (s == "fully-quant") return PlanMode::kFullyQuant;
  if (s == "ffn-only") return PlanMode::kFfnOnly;
  throw ConfigError("unknown plan mode \"" + s + "\"");
}

inline const char* to_string(LayerPrecision p) {
  switch (p) {
    case LayerPrecision::kFP: return "FP";
    case LayerPrecision::kFfnOnlyInt8: return "FFN_ONLY_INT8";
    case LayerPrecision::kFullInt8: return "FULL_INT8";
  }
  return "?";
}

// One of the per-layer mixed-precision combinations over the encoder stack.
struct PrecisionPlan {
  PlanMode mode = PlanMode::kFP;
  std::vector<LayerPrecision> layers;
  // Round FP activations to binary16 at kernel boundaries.
  bool fp16_storage = false;

  std::size_t quantized_layer_count() const {
    return static_cast<std::size_t>(std::count_if(
        layers.begin(), layers.end(), [](LayerPrecision p) { return p != LayerPrecision::kFP; }));
  }

  static PrecisionPlan all_fp(std::size_t num_layers) {
    return {PlanMode::kFP, std::vector<LayerPrecision>(num_layers, LayerPrecision::kFP)};
  }

  // Quantizes layers [0, k): the contiguous-prefix sweep used for profiles.
  static PrecisionPlan prefix(PlanMode mode, std::size_t num_layers, std::size_t k) {
    if (k > num_layers) {
      throw ConfigError(detail::concat("cannot quantize ", k, " of ", num_layers, " layers"));
    }
    if (mode == PlanMode::kFP && k != 0) {
      throw ConfigError("an FP plan cannot quantize layers");
    }
    PrecisionPlan p{mode, std::vector<LayerPrecision>(num_layers, LayerPrecision::kFP)};
    const LayerPrecision q = mode == PlanMode::kFullyQuant ? LayerPrecision::kFullInt8
                                                           : LayerPrecision::kFfnOnlyInt8;
    for (std::size_t i = 0; i < k; ++i) p.layers[i] = q;
    return p;
  }

  void validate(std::size_t num_layers) const {
    if (layers.size() != num_layers) {
      throw ConfigError(detail::concat("plan covers ", layers.size(), " layers, model has ",
                                       num_layers));
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerPrecision p = layers[i];
      const bool ok = p == LayerPrecision::kFP ||
                      (mode == PlanMode::kFullyQuant && p == LayerPrecision::kFullInt8) ||
                      (mode == PlanMode::kFfnOnly && p == LayerPrecision::kFfnOnlyInt8);
      if (!ok) {
        throw ConfigError(detail::concat("layer ", i, " precision ", to_string(p),
                                         " is not allowed in a ", to_string(mode), " plan"));
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Quantization site names
// ---------------------------------------------------------------------------

namespace sites {

inline std::string embed_out() { return "embed.out"; }
inline std::string at(std::size_t layer, const char* name) {
  return "L" + std::to_string(layer) + "." + name;
}
inline std::string attn_in(std::size_t i) { return at(i, "attn.in"); }
inline std::string attn_q(std::size_t i) { return at(i, "attn.q"); }
inline std::string attn_k(std::size_t i) { return at(i, "attn.k"); }
inline std::string attn_v(std::size_t i) { return at(i, "attn.v"); }
inline std::string attn_softmax(std::size_t i) { return at(i, "attn.softmax"); }
inline std::string attn_out_in(std::size_t i) { return at(i, "attn.out_in"); }
inline std::string ffn_in(std::size_t i) { return at(i, "ffn.in"); }
inline std::string ffn_mid(std::size_t i) { return at(i, "ffn.mid"); }
// Not a quantization site: the FP -> INT8 -> FP boundary marker at a
// layer's output, used in dataflow traces.
inline std::string ffn_out(std::size_t i) { return at(i, "ffn.out"); }
inline std::string attn_out(std::size_t i) { return at(i, "attn.out"); }

// Input quantization site of a fully quantized layer. Layer 0 reads the
// embedding output, quantized inside the embedding kernel.
inline std::string layer_input(std::size_t i) { return i == 0 ? embed_out() : attn_in(i); }

// Every activation site of an L-layer encoder.
inline std::vector<std::string> all(std::size_t num_layers) {
  std::vector<std::string> out{embed_out()};
  for (std::size_t i = 0; i < num_layers; ++i) {
    for (auto&& s : {attn_in(i), attn_q(i), attn_k(i), attn_v(i), attn_softmax(i),
                     attn_out_in(i), ffn_in(i), ffn_mid(i)}) {
      out.push_back(s);
    }
  }
  return out;
}

// Sites whose scales a plan consumes.
inline std::vector<std::string> required(const PrecisionPlan& plan) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < plan.layers.size(); ++i) {
    switch (plan.layers[i]) {
      case LayerPrecision::kFP:
        break;
      case LayerPrecision::kFullInt8:
        for (auto&& s : {layer_input(i), attn_q(i), attn_k(i), attn_v(i), attn_softmax(i),
                         attn_out_in(i), ffn_in(i), ffn_mid(i)}) {
          out.push_back(s);
        }
        break;
      case LayerPrecision::kFfnOnlyInt8:
        out.push_back(ffn_in(i));
        out.push_back(ffn_mid(i));
        break;
    }
  }
  return out;
}

}  // namespace sites

// ---------------------------------------------------------------------------
// Taps and dataflow trace
// ---------------------------------------------------------------------------

struct Tap {
  TensorF activation;             // value before quantization
  std::optional<TensorI8> codes;  // set when the site was quantized
  float scale = 0.0f;
};

struct DataflowEvent {
  enum class Op { kQuantize, kDequantize, kTransfer };
  Op op;
  std::string site;
  ElemKind kind;  // element kind leaving the event

  friend bool operator==(const DataflowEvent&, const DataflowEvent&) = default;
};

// Collects taps and dataflow events during one encode call.
class Recorder {
 public:
  void tap(const std::string& site, const TensorF& x) {
    auto it = taps_.find(site);
    if (it == taps_.end()) {
      taps_.emplace(site, Tap{x, std::nullopt, 0.0f});
    } else {
      it->second.activation = x;
    }
  }

  void quantized(const std::string& site, const TensorF& x, const TensorI8& q, float scale) {
    taps_.insert_or_assign(site, Tap{x, q, scale});
    trace_.push_back({DataflowEvent::Op::kQuantize, site, ElemKind::kI8});
  }

  void dequantized(const std::string& site) {
    trace_.push_back({DataflowEvent::Op::kDequantize, site, ElemKind::kF32});
  }

  void transfer(const std::string& edge, ElemKind kind) {
    trace_.push_back({DataflowEvent::Op::kTransfer, edge, kind});
  }

  std::map<std::string, Tap> take_taps() { return std::move(taps_); }
  std::vector<DataflowEvent> take_trace() { return std::move(trace_); }

 private:
  std::map<std::string, Tap> taps_;
  std::vector<DataflowEvent> trace_;
};

// Quantize with an optional recorder hook.
inline TensorI8 quantize_at(const std::string& site, const TensorF& x, float scale,
                            Recorder* rec) {
  TensorI8 q = quantize(x, scale);
  if (rec) rec->quantized(site, x, q, scale);
  return q;
}

struct EncoderOutput {
  TensorF hidden_states;
  std::map<std::string, Tap> taps;
  std::vector<DataflowEvent> trace;
};

// Value passed between layers: FP32, or INT8 codes with their scale.
struct QuantizedActivation {
  TensorI8 codes;
  float scale;
};
using Activation = std::variant<TensorF, QuantizedActivation>;

// ---------------------------------------------------------------------------
// Layer weights
// ---------------------------------------------------------------------------

struct LayerWeights {
  TensorF qkv_weight;  // [h x 3h], columns q | k | v
  TensorF qkv_bias;    // [3h]
  const TensorF* out_weight;
  const TensorF* out_bias;
  const TensorF* attn_gamma;
  const TensorF* attn_beta;
  const TensorF* w1;
  const TensorF* b1;
  const TensorF* w2;
  const TensorF* b2;
  const TensorF* ffn_gamma;
  const TensorF* ffn_beta;
};

struct QuantizedLayerWeights {
  TensorI8 qkv;  // [h x 3h]
  float scale_q, scale_k, scale_v;
  TensorI8 out;
  float scale_out;
  TensorI8 w1;
  float scale_w1;
  TensorI8 w2;
  float scale_w2;
};

struct AttentionConfig {
  std::size_t num_heads = 1;
  float layernorm_eps = kDefaultLayerNormEps;
  bool fp16_storage = false;
};

inline constexpr float kAttentionMaskValue = -10000.0f;

namespace detail {

inline void maybe_round_half(TensorF& x, bool on) {
  if (on) round_to_half_inplace(x);
}

// Adds the key mask to [heads x s x s] scores.
inline void mask_scores(TensorF& scores, std::size_t attention_length) {
  const std::size_t heads = scores.dim(0);
  const std::size_t s = scores.dim(1);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t c = attention_length; c < s; ++c) scores(h, r, c) += kAttentionMaskValue;
    }
  }
}

inline void scale_inplace(TensorF& x, float f) {
  for (float& v : x.data()) v *= f;
}

// acc[:, block b] * multipliers[b] + bias, over column blocks of width w.
inline TensorF dequant_bias_blocks(const TensorI32& acc, std::span<const float> multipliers,
                                   const TensorF& bias, std::size_t width) {
  TensorF out(acc.shape());
  for (std::size_t r = 0; r < acc.rows(); ++r) {
    for (std::size_t c = 0; c < acc.cols(); ++c) {
      const float m = multipliers[c / width];
      out(r, c) = static_cast<float>(static_cast<double>(acc(r, c)) * m) + bias[c];
    }
  }
  ++counters().dequantize_calls;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

// word[id] + position[t] + token_type[segment], then layernorm, one token at
// a time.
inline TensorF embed_fused(const ModelArchive& archive, const EncodedInput& input) {
  const auto& m = archive.manifest;
  const TensorF& word = archive.tensor(keys::kWordEmb);
  const TensorF& pos = archive.tensor(keys::kPosEmb);
  const TensorF& type = archive.tensor(keys::kTypeEmb);
  const TensorF& gamma = archive.tensor(keys::kEmbGamma);
  const TensorF& beta = archive.tensor(keys::kEmbBeta);
  const std::size_t s = input.token_ids.size();
  const std::size_t h = m.hidden;
  if (s == 0) throw InputError("empty input sequence");
  if (input.segment_ids.size() != s) throw InputError("token/segment id lengths differ");
  if (s > m.max_position) {
    throw InputError(detail::concat("sequence length ", s, " exceeds max_position ",
                                    m.max_position));
  }
  TensorF out({s, h});
  for (std::size_t t = 0; t < s; ++t) {
    const auto id = input.token_ids[t];
    const auto seg = input.segment_ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= m.vocab_size) {
      throw InputError(detail::concat("token id ", id, " at position ", t,
                                      " outside vocab of ", m.vocab_size));
    }
    if (seg < 0 || static_cast<std::size_t>(seg) >= m.type_vocab_size) {
      throw InputError(detail::concat("segment id ", seg, " at position ", t,
                                      " outside type vocab of ", m.type_vocab_size));
    }
    auto row = out.row(t);
    const auto w = word.row(static_cast<std::size_t>(id));
    const auto p = pos.row(t);
    const auto ty = type.row(static_cast<std::size_t>(seg));
    for (std::size_t j = 0; j < h; ++j) row[j] = w[j] + p[j] + ty[j];
    layernorm_row(row, gamma.data(), beta.data(), m.layernorm_eps);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Floating-point sub-layers
// ---------------------------------------------------------------------------

// Scaled dot-product attention over [heads x s x d] inputs; returns the
// softmax probabilities.
inline TensorF attention_probs(const TensorF& qh, const TensorF& kh, std::size_t attention_length) {
  TensorF scores = batched_gemm_f32(qh, kh, /*b_transposed=*/true);
  detail::scale_inplace(scores, 1.0f / std::sqrt(static_cast<float>(qh.dim(2))));
  detail::mask_scores(scores, attention_length);
  return softmax_rows(std::move(scores));
}

inline TensorF mha_fp(const LayerWeights& w, const TensorF& x, std::size_t attention_length,
                      const AttentionConfig& cfg, std::size_t layer = 0,
                      Recorder* rec = nullptr) {
  const std::size_t h = x.cols();
  TensorF qkv = gemm_f32(x, w.qkv_weight);
  add_bias_inplace(qkv, w.qkv_bias);
  detail::maybe_round_half(qkv, cfg.fp16_storage);
  const TensorF qh = split_heads(column_slice(qkv, 0, h), cfg.num_heads);
  const TensorF kh = split_heads(column_slice(qkv, h, h), cfg.num_heads);
  const TensorF vh = split_heads(column_slice(qkv, 2 * h, h), cfg.num_heads);
  if (rec) {
    rec->tap(sites::attn_q(layer), qh);
    rec->tap(sites::attn_k(layer), kh);
    rec->tap(sites::attn_v(layer), vh);
  }
  TensorF probs = attention_probs(qh, kh, attention_length);
  detail::maybe_round_half(probs, cfg.fp16_storage);
  if (rec) rec->tap(sites::attn_softmax(layer), probs);
  TensorF ctx = merge_heads(batched_gemm_f32(probs, vh));
  detail::maybe_round_half(ctx, cfg.fp16_storage);
  if (rec) rec->tap(sites::attn_out_in(layer), ctx);
  TensorF out = add_bias_residual(gemm_f32(ctx, *w.out_weight), *w.out_bias, x);
  out = layernorm(std::move(out), *w.attn_gamma, *w.attn_beta, cfg.layernorm_eps);
  detail::maybe_round_half(out, cfg.fp16_storage);
  return out;
}

inline TensorF ffn_fp(const LayerWeights& w, const TensorF& x, const AttentionConfig& cfg,
                      std::size_t layer = 0, Recorder* rec = nullptr) {
  TensorF mid = gemm_f32(x, *w.w1);
  add_bias_inplace(mid, *w.b1);
  mid = gelu(std::move(mid));
  detail::maybe_round_half(mid, cfg.fp16_storage);
  if (rec) rec->tap(sites::ffn_mid(layer), mid);
  TensorF out = add_bias_residual(gemm_f32(mid, *w.w2), *w.b2, x);
  out = layernorm(std::move(out), *w.ffn_gamma, *w.ffn_beta, cfg.layernorm_eps);
  detail::maybe_round_half(out, cfg.fp16_storage);
  return out;
}

// ---------------------------------------------------------------------------
// INT8 sub-layers
// ---------------------------------------------------------------------------

// Activation scales for one fully quantized MHA block.
struct MhaScales {
  float q, k, v, softmax, out_in;
  // Scale of the FFN-input site; the block's output is requantized with it.
  float out;
};

struct FfnScales {
  float mid;
  // Set when the output is requantized for the next INT8 layer.
  std::optional<float> out;
};

// Fully quantized attention block. Input and (when emit_int8) output are INT8;
// every GEMM inside runs on INT8 operands.
inline Activation mha_int8(const LayerWeights& w, const QuantizedLayerWeights& qw,
                           const QuantizedActivation& x, std::size_t attention_length,
                           const MhaScales& s, const AttentionConfig& cfg, bool emit_int8,
                           std::size_t layer = 0, Recorder* rec = nullptr) {
  const std::size_t h = x.codes.cols();
  const std::size_t d = h / cfg.num_heads;

  // QKV GEMM, then dequant + bias per q/k/v block.
  const TensorI32 acc = gemm_i8_i32(x.codes, qw.qkv);
  const float mult[3] = {x.scale * qw.scale_q, x.scale * qw.scale_k, x.scale * qw.scale_v};
  const TensorF qkv = detail::dequant_bias_blocks(acc, mult, w.qkv_bias, h);
  const TensorF qh = split_heads(column_slice(qkv, 0, h), cfg.num_heads);
  const TensorF kh = split_heads(column_slice(qkv, h, h), cfg.num_heads);
  const TensorF vh = split_heads(column_slice(qkv, 2 * h, h), cfg.num_heads);
  const TensorI8 qq = quantize_at(sites::attn_q(layer), qh, s.q, rec);
  const TensorI8 kq = quantize_at(sites::attn_k(layer), kh, s.k, rec);
  const TensorI8 vq = quantize_at(sites::attn_v(layer), vh, s.v, rec);

  // Scores: the 1/sqrt(d) factor is folded into the dequant multiplier.
  const TensorI32 score_acc = batched_gemm_i8_i32(qq, kq, /*b_transposed=*/true);
  TensorF scores = dequantize_i32(score_acc, s.q * s.k / std::sqrt(static_cast<float>(d)));
  detail::mask_scores(scores, attention_length);
  const TensorF probs = softmax_rows(std::move(scores));
  const TensorI8 pq = quantize_at(sites::attn_softmax(layer), probs, s.softmax, rec);

  const TensorI32 ctx_acc = batched_gemm_i8_i32(pq, vq);
  const TensorF ctx = merge_heads(dequantize_i32(ctx_acc, s.softmax * s.v));
  const TensorI8 ctxq = quantize_at(sites::attn_out_in(layer), ctx, s.out_in, rec);

  // Output projection; dequant + bias + residual + layernorm (+ quantize).
  const TensorI32 out_acc = gemm_i8_i32(ctxq, qw.out);
  TensorF out = add_bias_residual(dequantize_i32(out_acc, s.out_in * qw.scale_out),
                                  *w.out_bias, dequantize(x.codes, x.scale));
  out = layernorm(std::move(out), *w.attn_gamma, *w.attn_beta, cfg.layernorm_eps);
  if (!emit_int8) return out;
  TensorI8 oq = quantize_at(sites::ffn_in(layer), out, s.out, rec);
  return QuantizedActivation{std::move(oq), s.out};
}

// Quantized FFN block. `out_site` names the site used when the output is
// requantized (the next layer's input).
inline Activation ffn_int8(const LayerWeights& w, const QuantizedLayerWeights& qw,
                           const QuantizedActivation& x, const FfnScales& s,
                           const AttentionConfig& cfg, std::size_t layer = 0,
                           Recorder* rec = nullptr, const std::string& out_site = {}) {
  TensorF mid = dequantize_i32(gemm_i8_i32(x.codes, qw.w1), x.scale * qw.scale_w1);
  add_bias_inplace(mid, *w.b1);
  mid = gelu(std::move(mid));
  const TensorI8 midq = quantize_at(sites::ffn_mid(layer), mid, s.mid, rec);
  TensorF out = add_bias_residual(dequantize_i32(gemm_i8_i32(midq, qw.w2), s.mid * qw.scale_w2),
                                  *w.b2, dequantize(x.codes, x.scale));
  out = layernorm(std::move(out), *w.ffn_gamma, *w.ffn_beta, cfg.layernorm_eps);
  if (!s.out) return out;
  TensorI8 oq = quantize_at(out_site, out, *s.out, rec);
  return QuantizedActivation{std::move(oq), *s.out};
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

// Weight scale: the calibration entry under the tensor key if present,
// otherwise min-max over the weight itself.
inline float weight_scale(const TensorF& w, const std::string& key,
                          const CalibrationTable* calib) {
  if (calib && calib->contains(key)) return calib->scale(key);
  return scale_from_amax(max_abs(w.data()));
}

// Immutable inference engine over one archive. Safe to share between
// threads; encode() keeps all state on the stack.
class Encoder {
 public:
  explicit Encoder(std::shared_ptr<const ModelArchive> archive,
                   std::optional<CalibrationTable> calibration = std::nullopt)
      : archive_(std::move(archive)),
        calibration_(calibration ? std::move(calibration) : archive_->calibration) {
    validate_archive(*archive_, {.permissive = true});
    if (calibration_ && !calibration_->fingerprint().empty() &&
        calibration_->fingerprint() != model_fingerprint(*archive_)) {
      throw CalibrationError("calibration fingerprint " + calibration_->fingerprint() +
                             " does not match the model");
    }
    const auto& m = archive_->manifest;
    cfg_.num_heads = m.num_heads;
    cfg_.layernorm_eps = m.layernorm_eps;
    const CalibrationTable* calib = calibration_ ? &*calibration_ : nullptr;
    for (std::size_t i = 0; i < m.num_layers; ++i) {
      auto t = [&](const std::string& suffix) -> const TensorF& {
        return archive_->tensor(keys::layer(i, suffix));
      };
      const TensorF& wq = t("attn.q.weight");
      const TensorF& wk = t("attn.k.weight");
      const TensorF& wv = t("attn.v.weight");
      const TensorF bias = [&] {
        const TensorF bq = t("attn.q.bias").reshaped({1, m.hidden});
        const TensorF bk = t("attn.k.bias").reshaped({1, m.hidden});
        const TensorF bv = t("attn.v.bias").reshaped({1, m.hidden});
        return concat_columns<float>({&bq, &bk, &bv}).reshaped({3 * m.hidden});
      }();
      layers_.push_back(LayerWeights{concat_columns<float>({&wq, &wk, &wv}), bias,
                                     &t("attn.out.weight"), &t("attn.out.bias"),
                                     &t("attn.layernorm.gamma"), &t("attn.layernorm.beta"),
                                     &t("ffn.w1"), &t("ffn.b1"), &t("ffn.w2"), &t("ffn.b2"),
                                     &t("ffn.layernorm.gamma"), &t("ffn.layernorm.beta")});

      const float sq = weight_scale(wq, keys::layer(i, "attn.q.weight"), calib);
      const float sk = weight_scale(wk, keys::layer(i, "attn.k.weight"), calib);
      const float sv = weight_scale(wv, keys::layer(i, "attn.v.weight"), calib);
      const TensorI8 qq = quantize(wq, sq);
      const TensorI8 kq = quantize(wk, sk);
      const TensorI8 vq = quantize(wv, sv);
      const float so = weight_scale(t("attn.out.weight"), keys::layer(i, "attn.out.weight"), calib);
      const float s1 = weight_scale(t("ffn.w1"), keys::layer(i, "ffn.w1"), calib);
      const float s2 = weight_scale(t("ffn.w2"), keys::layer(i, "ffn.w2"), calib);
      qlayers_.push_back(QuantizedLayerWeights{
          concat_columns<std::int8_t>({&qq, &kq, &vq}), sq, sk, sv,
          quantize(t("attn.out.weight"), so), so, quantize(t("ffn.w1"), s1), s1,
          quantize(t("ffn.w2"), s2), s2});
    }
  }

  const ModelArchive& archive() const { return *archive_; }
  std::shared_ptr<const ModelArchive> archive_ptr() const { return archive_; }
  const ModelManifest& manifest() const { return archive_->manifest; }
  const CalibrationTable* calibration() const {
    return calibration_ ? &*calibration_ : nullptr;
  }
  const LayerWeights& layer(std::size_t i) const { return layers_.at(i); }
  const QuantizedLayerWeights& quantized_layer(std::size_t i) const { return qlayers_.at(i); }
  const AttentionConfig& attention_config() const { return cfg_; }

  // Throws ConfigError on a malformed plan and CalibrationError listing every
  // missing site.
  void check_plan(const PrecisionPlan& plan) const {
    plan.validate(manifest().num_layers);
    const auto req = sites::required(plan);
    if (req.empty()) return;
    if (!calibration_) {
      throw CalibrationError("plan quantizes " + std::to_string(plan.quantized_layer_count()) +
                             " layer(s) but the model has no calibration table");
    }
    const auto miss = calibration_->missing(req);
    if (!miss.empty()) {
      std::string msg = "calibration lacks site(s):";
      for (const auto& s : miss) msg += " " + s;
      throw CalibrationError(msg);
    }
  }

  EncoderOutput encode(const PrecisionPlan& plan, const EncodedInput& input,
                       bool capture_taps = false) const {
    check_plan(plan);
    Recorder recorder;
    Recorder* rec = capture_taps ? &recorder : nullptr;
    AttentionConfig cfg = cfg_;
    cfg.fp16_storage = plan.fp16_storage;
    const std::size_t num_layers = plan.layers.size();
    const std::size_t attn_len = input.attention_length;
    auto is_full = [&](std::size_t i) {
      return i < num_layers && plan.layers[i] == LayerPrecision::kFullInt8;
    };

    TensorF emb = embed_fused(*archive_, input);
    detail::maybe_round_half(emb, cfg.fp16_storage);
    if (rec) {
      rec->tap(sites::embed_out(), emb);
      rec->tap(sites::attn_in(0), emb);
    }
    Activation cur = std::move(emb);
    if (is_full(0)) {
      const float s = scale(sites::embed_out());
      TensorI8 q = quantize_at(sites::embed_out(), std::get<TensorF>(cur), s, rec);
      cur = QuantizedActivation{std::move(q), s};
    }
    if (rec) rec->transfer(sites::embed_out(), kind_of(cur));

    for (std::size_t i = 0; i < num_layers; ++i) {
      const LayerWeights& w = layers_[i];
      switch (plan.layers[i]) {
        case LayerPrecision::kFP: {
          const TensorF& x = std::get<TensorF>(cur);
          if (rec) {
            rec->tap(sites::attn_in(i), x);
          }
          TensorF a = mha_fp(w, x, attn_len, cfg, i, rec);
          if (rec) {
            rec->transfer(sites::attn_out(i), ElemKind::kF32);
            rec->tap(sites::ffn_in(i), a);
          }
          cur = ffn_fp(w, a, cfg, i, rec);
          break;
        }
        case LayerPrecision::kFullInt8: {
          if (std::holds_alternative<TensorF>(cur)) {
            // FP neighbour before this layer: one quantize at the boundary.
            const TensorF& x = std::get<TensorF>(cur);
            if (rec) rec->tap(sites::attn_in(i), x);
            const float s = scale(sites::attn_in(i));
            TensorI8 q = quantize_at(sites::attn_in(i), x, s, rec);
            cur = QuantizedActivation{std::move(q), s};
          }
          const auto& xq = std::get<QuantizedActivation>(cur);
          const MhaScales ms{scale(sites::attn_q(i)),      scale(sites::attn_k(i)),
                             scale(sites::attn_v(i)),      scale(sites::attn_softmax(i)),
                             scale(sites::attn_out_in(i)), scale(sites::ffn_in(i))};
          Activation a = mha_int8(w, qlayers_[i], xq, attn_len, ms, cfg, true, i, rec);
          if (rec) rec->transfer(sites::attn_out(i), ElemKind::kI8);
          FfnScales fs{scale(sites::ffn_mid(i)), std::nullopt};
          std::string out_site;
          if (is_full(i + 1)) {
            out_site = sites::attn_in(i + 1);
            fs.out = scale(out_site);
          }
          cur = ffn_int8(w, qlayers_[i], std::get<QuantizedActivation>(a), fs, cfg, i, rec,
                         out_site);
          if (rec && !fs.out) rec->dequantized(sites::ffn_out(i));
          break;
        }
        case LayerPrecision::kFfnOnlyInt8: {
          const TensorF& x = std::get<TensorF>(cur);
          if (rec) rec->tap(sites::attn_in(i), x);
          TensorF a = mha_fp(w, x, attn_len, cfg, i, rec);
          const float s = scale(sites::ffn_in(i));
          QuantizedActivation aq{quantize_at(sites::ffn_in(i), a, s, rec), s};
          if (rec) rec->transfer(sites::attn_out(i), ElemKind::kI8);
          cur = ffn_int8(w, qlayers_[i], aq, FfnScales{scale(sites::ffn_mid(i)), std::nullopt},
                         cfg, i, rec);
          if (rec) rec->dequantized(sites::ffn_out(i));
          break;
        }
      }
      if (std::holds_alternative<TensorF>(cur)) {
        detail::maybe_round_half(std::get<TensorF>(cur), cfg.fp16_storage);
      }
      if (rec) rec->transfer(sites::ffn_out(i), kind_of(cur));
    }

    if (!std::holds_alternative<TensorF>(cur)) {
      // Unreachable for valid plans: the last quantized layer emits FP32.
      const auto& q = std::get<QuantizedActivation>(cur);
      cur = dequantize(q.codes, q.scale);
    }
    EncoderOutput out{std::move(std::get<TensorF>(cur)), {}, {}};
    if (rec) {
      out.taps = recorder.take_taps();
      out.trace = recorder.take_trace();
    }
    return out;
  }

 private:
  static ElemKind kind_of(const Activation& a) {
    return std::holds_alternative<TensorF>(a) ? ElemKind::kF32 : ElemKind::kI8;
  }

  float scale(const std::string& site) const { return calibration_->scale(site); }

  std::shared_ptr<const ModelArchive> archive_;
  std::optional<CalibrationTable> calibration_;
  AttentionConfig cfg_;
  std::vector<LayerWeights> layers_;
  std::vector<QuantizedLayerWeights> qlayers_;
};

}  // namespace mpinfer
