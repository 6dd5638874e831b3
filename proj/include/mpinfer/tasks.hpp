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
#include <string>
#include <vector>

#include "mpinfer/encoder.hpp"
#include "mpinfer/kernels.hpp"
#include "mpinfer/model_io.hpp"

namespace mpinfer {

struct TaskResult {
  std::vector<int> label_ids;
  // One distribution of num_labels probabilities per label position, flattened.
  std::vector<float> scores;
  bool per_token = false;
};

struct ClassifyOptions {
  // Independent sigmoid per label, threshold 0.5.
  bool multi_label = false;
};

namespace detail {

// Lowest index wins ties.
inline int argmax(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

inline void require_task(const ModelArchive& a, std::initializer_list<Task> allowed,
                         const char* op) {
  for (Task t : allowed) {
    if (a.manifest.task == t) return;
  }
  throw ConfigError(std::string(op) + " is not available for a " +
                    to_string(a.manifest.task) + " model");
}

}  // namespace detail

// pooled = tanh(h[CLS] x pooler + b); logits = pooled x head + b.
inline TaskResult classify(const ModelArchive& archive, const EncoderOutput& enc,
                           const ClassifyOptions& opts = {}) {
  detail::require_task(archive, {Task::kClassification, Task::kTextMatching}, "classify");
  const std::size_t h = archive.manifest.hidden;
  const TensorF cls({1, h}, std::vector<float>(enc.hidden_states.row(0).begin(),
                                               enc.hidden_states.row(0).end()));
  TensorF pooled = gemm_f32(cls, archive.tensor(keys::kPoolerW));
  add_bias_inplace(pooled, archive.tensor(keys::kPoolerB));
  for (float& v : pooled.data()) v = std::tanh(v);
  TensorF logits = gemm_f32(pooled, archive.tensor(keys::kHeadW));
  add_bias_inplace(logits, archive.tensor(keys::kHeadB));

  TaskResult r;
  if (opts.multi_label) {
    for (std::size_t j = 0; j < logits.size(); ++j) {
      const float p = 1.0f / (1.0f + std::exp(-logits[j]));
      r.scores.push_back(p);
      if (p > 0.5f) r.label_ids.push_back(static_cast<int>(j));
    }
    return r;
  }
  const TensorF probs = softmax_rows(std::move(logits));
  r.scores.assign(probs.data().begin(), probs.data().end());
  r.label_ids.push_back(detail::argmax(probs.data()));
  return r;
}

// Per-token argmax over the first attention_length positions.
inline TaskResult tag(const ModelArchive& archive, const EncoderOutput& enc,
                      std::size_t attention_length) {
  detail::require_task(archive, {Task::kSequenceLabeling}, "tag");
  TaskResult r;
  r.per_token = true;
  const std::size_t n = std::min(attention_length, enc.hidden_states.rows());
  if (n == 0) return r;
  const std::size_t h = archive.manifest.hidden;
  const TensorF tokens({n, h}, std::vector<float>(enc.hidden_states.data().begin(),
                                                  enc.hidden_states.data().begin() +
                                                      static_cast<std::ptrdiff_t>(n * h)));
  TensorF logits = gemm_f32(tokens, archive.tensor(keys::kHeadW));
  add_bias_inplace(logits, archive.tensor(keys::kHeadB));
  const TensorF probs = softmax_rows(std::move(logits));
  r.scores.assign(probs.data().begin(), probs.data().end());
  for (std::size_t t = 0; t < n; ++t) r.label_ids.push_back(detail::argmax(probs.row(t)));
  return r;
}

// Pair encoding, encoder under `plan`, classification head.
inline TaskResult match(const Encoder& encoder, const PrecisionPlan& plan,
                        std::string_view text_a, std::string_view text_b) {
  detail::require_task(encoder.archive(), {Task::kTextMatching}, "match");
  const EncodedInput in = encode(encoder.archive().vocab, text_a, text_b);
  return classify(encoder.archive(), encoder.encode(plan, in));
}

// Dispatches on the manifest task.
inline TaskResult run_task(const Encoder& encoder, const PrecisionPlan& plan,
                           const EncodedInput& in, const ClassifyOptions& opts = {}) {
  const EncoderOutput out = encoder.encode(plan, in);
  if (encoder.manifest().task == Task::kSequenceLabeling) {
    return tag(encoder.archive(), out, in.attention_length);
  }
  return classify(encoder.archive(), out, opts);
}

}  // namespace mpinfer
