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

#include "fixtures.hpp"
#include "mpinfer/profiler.hpp"
#include "mpinfer/tasks.hpp"
#include "oracle/naive_reference.hpp"

using namespace mpinfer;

namespace {

ModelArchive toy(Task task, std::size_t labels) {
  fixtures::Spec s;
  s.layers = 1;
  s.hidden = 4;
  s.heads = 2;
  s.intermediate = 8;
  s.task = task;
  s.labels = labels;
  return fixtures::make_archive(s);
}

void set(ModelArchive& a, const std::string& key, std::vector<float> v) {
  a.tensors.insert_or_assign(key, TensorF(a.tensor(key).shape(), std::move(v)));
}

EncoderOutput hidden(std::size_t rows, std::vector<float> v) {
  return EncoderOutput{TensorF({rows, 4}, std::move(v)), {}, {}};
}

void expect_distributions(const TaskResult& r, std::size_t labels) {
  ASSERT_EQ(r.scores.size(), r.label_ids.size() * labels);
  for (std::size_t p = 0; p < r.label_ids.size(); ++p) {
    double sum = 0;
    std::size_t best = 0;
    for (std::size_t j = 0; j < labels; ++j) {
      sum += r.scores[p * labels + j];
      if (r.scores[p * labels + j] > r.scores[p * labels + best]) best = j;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
    EXPECT_EQ(r.label_ids[p], static_cast<int>(best));
  }
}

}  // namespace

TEST(Classify, HandComputedTwoLabelInstance) {
  ModelArchive a = toy(Task::kClassification, 2);
  set(a, keys::kPoolerW, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  set(a, keys::kPoolerB, {0, 0, 0, 0});
  set(a, keys::kHeadW, {1, 0, 0, 1, 1, -1, 0, 0});
  set(a, keys::kHeadB, {0, 0.1f});
  // pooled = tanh([0.5, -0.5, 1, 0]); logits = [1.22371, -1.12371]
  const TaskResult r = classify(a, hidden(2, {0.5f, -0.5f, 1, 0, 9, 9, 9, 9}));
  ASSERT_EQ(r.label_ids, std::vector<int>{0});
  EXPECT_NEAR(r.scores[0], 0.9127291460, 1e-6);
  EXPECT_NEAR(r.scores[1], 1 - 0.9127291460, 1e-6);
  EXPECT_FALSE(r.per_token);
}

TEST(Classify, ZeroHeadIsUniformAndPicksLabelZero) {
  ModelArchive a = toy(Task::kClassification, 3);
  set(a, keys::kHeadW, std::vector<float>(12, 0.0f));
  set(a, keys::kHeadB, {0, 0, 0});
  const TaskResult r = classify(a, hidden(1, {0.3f, 0.1f, -2, 4}));
  EXPECT_EQ(r.label_ids, std::vector<int>{0});
  for (float p : r.scores) EXPECT_FLOAT_EQ(p, 1.0f / 3.0f);
}

TEST(Classify, MultiLabelUsesIndependentSigmoids) {
  ModelArchive a = toy(Task::kClassification, 2);
  set(a, keys::kPoolerW, std::vector<float>(16, 0.0f));
  set(a, keys::kPoolerB, {0, 0, 0, 0});
  set(a, keys::kHeadW, std::vector<float>(8, 0.0f));
  set(a, keys::kHeadB, {2.0f, -1.0f});
  const TaskResult r = classify(a, hidden(1, {1, 2, 3, 4}), {.multi_label = true});
  EXPECT_EQ(r.label_ids, std::vector<int>{0});
  EXPECT_NEAR(r.scores[0], 1 / (1 + std::exp(-2.0)), 1e-6);
  EXPECT_NEAR(r.scores[1], 1 / (1 + std::exp(1.0)), 1e-6);
}

TEST(Classify, WrongTaskIsConfigError) {
  const ModelArchive a = toy(Task::kSequenceLabeling, 3);
  EXPECT_THROW(classify(a, hidden(1, {1, 2, 3, 4})), ConfigError);
  const ModelArchive c = toy(Task::kClassification, 3);
  EXPECT_THROW(tag(c, hidden(1, {1, 2, 3, 4}), 1), ConfigError);
}

TEST(Tag, HandComputedTwoTokenInstance) {
  ModelArchive a = toy(Task::kSequenceLabeling, 3);
  set(a, keys::kHeadW, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
  set(a, keys::kHeadB, {0, 0.5f, 0});
  const TaskResult r = tag(a, hidden(3, {1, 0, 0, 0, 0, 2, 0, -1, 5, 5, 5, 5}), 2);
  EXPECT_TRUE(r.per_token);
  ASSERT_EQ(r.label_ids, (std::vector<int>{0, 2}));
  const double want[6] = {0.506480391, 0.307195886, 0.186323723,
                          0.111165622, 0.067425358, 0.821409019};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(r.scores[i], want[i], 1e-6) << i;
}

TEST(Tag, EmptyAndZeroHead) {
  ModelArchive a = toy(Task::kSequenceLabeling, 3);
  EXPECT_TRUE(tag(a, hidden(2, std::vector<float>(8, 1.0f)), 0).label_ids.empty());
  set(a, keys::kHeadW, std::vector<float>(12, 0.0f));
  set(a, keys::kHeadB, {0, 0, 0});
  const TaskResult r = tag(a, hidden(3, {1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 2, 3}), 3);
  EXPECT_EQ(r.label_ids, (std::vector<int>{0, 0, 0}));
}

TEST(Tasks, EndToEndMatchesComposedReference) {
  const auto a = fixtures::shared(fixtures::make_archive({}));
  const Encoder enc(a);
  const auto in = encode(a->vocab, "the cat sat on the mat", std::nullopt);
  const TaskResult r = run_task(enc, PrecisionPlan::all_fp(2), in);
  // Head in double over the double-precision encoder.
  const ref::Mat h = ref::encoder(*a, in);
  ref::Mat cls(1, h.c);
  for (std::size_t j = 0; j < h.c; ++j) cls(0, j) = h(0, j);
  ref::Mat pooled = ref::linear(cls, ref::from(a->tensor(keys::kPoolerW)), ref::vec(a->tensor(keys::kPoolerB)));
  for (double& v : pooled.v) v = std::tanh(v);
  ref::Mat logits = ref::linear(pooled, ref::from(a->tensor(keys::kHeadW)), ref::vec(a->tensor(keys::kHeadB)));
  ref::softmax_row(logits.v.data(), logits.c);
  ASSERT_EQ(r.scores.size(), logits.c);
  for (std::size_t j = 0; j < logits.c; ++j) EXPECT_NEAR(r.scores[j], logits.v[j], 1e-5);
  expect_distributions(r, 3);
}

TEST(Tasks, MatchEqualsClassifyOnThePairEncoding) {
  fixtures::Spec s;
  s.task = Task::kTextMatching;
  s.labels = 2;
  const auto a = fixtures::shared(fixtures::make_archive(s));
  const Encoder enc(a);
  const auto plan = PrecisionPlan::all_fp(2);
  const TaskResult m = match(enc, plan, "the cat", "the cat");
  const EncodedInput in = encode(a->vocab, "the cat", "the cat");
  const TaskResult c = classify(*a, enc.encode(plan, in));
  EXPECT_EQ(m.label_ids, c.label_ids);
  EXPECT_EQ(m.scores, c.scores);
  // [CLS] the cat [SEP] | the cat [SEP]
  EXPECT_EQ(std::vector<std::int32_t>(in.segment_ids.begin(), in.segment_ids.begin() + 7),
            (std::vector<std::int32_t>{0, 0, 0, 0, 1, 1, 1}));
  const auto plain = fixtures::shared(fixtures::make_archive({}));
  EXPECT_THROW(match(Encoder(plain), plan, "a", "b"), ConfigError);
}

TEST(Tasks, PlanChangesScoresNotShape) {
  for (const char* name : {"tiny_cls", "tiny_ner", "tiny_match"}) {
    const auto a = fixtures::shared(load_archive(fixtures::data_dir() / name));
    const Encoder enc(a);
    const std::size_t labels = a->manifest.num_labels;
    const auto in = encode(a->vocab, "the quick brown fox", std::string("was not bad"));
    const TaskResult fp = run_task(enc, PrecisionPlan::all_fp(2), in);
    for (PlanMode m : {PlanMode::kFullyQuant, PlanMode::kFfnOnly}) {
      const TaskResult q = run_task(enc, PrecisionPlan::prefix(m, 2, 2), in);
      EXPECT_EQ(q.label_ids.size(), fp.label_ids.size()) << name;
      EXPECT_EQ(q.per_token, fp.per_token) << name;
      EXPECT_NE(q.scores, fp.scores) << name;
      for (int l : q.label_ids) EXPECT_LT(static_cast<std::size_t>(l), labels);
      expect_distributions(q, labels);
      EXPECT_EQ(run_task(enc, PrecisionPlan::prefix(m, 2, 2), in).scores, q.scores) << name;
    }
    if (a->manifest.task == Task::kSequenceLabeling) {
      EXPECT_EQ(fp.label_ids.size(), in.attention_length);
    }
  }
}
