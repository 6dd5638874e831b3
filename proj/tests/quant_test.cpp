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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "mpinfer/quant.hpp"

using namespace mpinfer;

TEST(Scale, FromAmax) {
  EXPECT_EQ(scale_from_amax(127.0f), 1.0f);
  EXPECT_EQ(scale_from_amax(2.0f), 2.0f / 127.0f);
  EXPECT_FLOAT_EQ(scale_from_amax(0.0f), 1e-8f);
  EXPECT_GT(scale_from_amax(0.0f), 0.0f);
}

TEST(Quantize, Examples) {
  const float s = 1.0f / 127.0f;
  EXPECT_EQ(quantize(TensorF::vector({1.0f, -0.5f, 0.25f}), s).values(),
            (std::vector<std::int8_t>{127, -64, 32}));
  EXPECT_EQ(quantize_value(0.0f, 3.7f), 0);
  EXPECT_EQ(quantize_value(10.0f, s), 127);
  EXPECT_EQ(quantize_value(-10.0f, s), -128);
  EXPECT_EQ(quantize_value(NAN, s), 0);
}

TEST(Quantize, HalfwayRoundsAwayFromZero) {
  EXPECT_EQ(quantize_value(2.5f, 1.0f), 3);
  EXPECT_EQ(quantize_value(-2.5f, 1.0f), -3);
  EXPECT_EQ(quantize_value(-63.5f, 1.0f), -64);
  EXPECT_EQ(quantize_value(0.5f, 1.0f), 1);
}

TEST(Quantize, NonPositiveScaleIsCalibrationError) {
  EXPECT_THROW(quantize(TensorF::vector({1}), 0.0f), CalibrationError);
  EXPECT_THROW(quantize(TensorF::vector({1}), -1.0f), CalibrationError);
  EXPECT_THROW(dequantize(TensorI8::vector({1}), 0.0f), CalibrationError);
  EXPECT_THROW(requantize_i32(TensorI32::vector({1}), 1.0f, NAN, 1.0f), CalibrationError);
}

TEST(Dequantize, Examples) {
  EXPECT_EQ(dequantize(TensorI8::vector({0}), 0.3f)[0], 0.0f);
  EXPECT_EQ(dequantize(TensorI8::vector({127}), 0.5f)[0], 63.5f);
}

TEST(Quantize, RoundTripBoundOverMillionSamples) {
  std::mt19937 g(2024);
  std::uniform_real_distribution<float> amax_d(1e-3f, 1e3f);
  for (int batch = 0; batch < 100; ++batch) {
    const float amax = amax_d(g);
    const float s = scale_from_amax(amax);
    std::uniform_real_distribution<float> x_d(-127.0f * s, 127.0f * s);
    TensorF x({10000});
    for (float& v : x.data()) v = x_d(g);
    const TensorF back = dequantize(quantize(x, s), s);
    for (std::size_t i = 0; i < x.size(); ++i) {
      ASSERT_LE(std::abs(static_cast<double>(back[i]) - x[i]), s / 2.0 * (1 + 1e-6))
          << "x=" << x[i] << " s=" << s;
    }
  }
}

TEST(Requantize, Examples) {
  EXPECT_EQ(requantize_i32(TensorI32::vector({0}), 0.1f, 0.2f, 0.3f)[0], 0);
  EXPECT_EQ(requantize_i32(TensorI32::vector({100}), 1, 1, 1)[0], 100);
  EXPECT_EQ(requantize_i32(TensorI32::vector({1000}), 1, 1, 1)[0], 127);
}

TEST(Requantize, WithinOneCodeOfTwoStepOracle) {
  std::mt19937 g(7);
  std::uniform_int_distribution<std::int32_t> c_d(-2000000, 2000000);
  std::uniform_real_distribution<float> s_d(1e-4f, 1e-1f);
  for (int t = 0; t < 200; ++t) {
    const float sa = s_d(g), sb = s_d(g), so = s_d(g);
    TensorI32 c({500});
    for (auto& v : c.data()) v = c_d(g);
    const TensorI8 direct = requantize_i32(c, sa, sb, so);
    const TensorI8 two_step = quantize(dequantize_i32(c, sa * sb), so);
    for (std::size_t i = 0; i < c.size(); ++i) {
      ASSERT_LE(std::abs(int{direct[i]} - int{two_step[i]}), 1);
    }
  }
}

TEST(MinMax, RunningMax) {
  CalibrationTable t;
  minmax_observe(t, "s", TensorF::vector({0.5f}));
  minmax_observe(t, "s", TensorF::vector({-2.0f}));
  minmax_observe(t, "s", TensorF::vector({1.0f}));
  EXPECT_EQ(t.amax("s"), 2.0f);
  EXPECT_EQ(t.scale("s"), 2.0f / 127.0f);
  EXPECT_TRUE(t.warnings().empty());
}

TEST(MinMax, ZeroStreamFloorsWithWarning) {
  CalibrationTable t;
  minmax_observe(t, "z", TensorF({4}));
  EXPECT_EQ(t.amax("z"), 0.0f);
  EXPECT_TRUE(t.entry("z").floored());
  EXPECT_FLOAT_EQ(t.scale("z"), 1e-8f);
  ASSERT_EQ(t.warnings().size(), 1u);
  EXPECT_NE(t.warnings()[0].find("z"), std::string::npos);
}

TEST(MinMax, OrderIndependent) {
  std::mt19937 g(99);
  std::normal_distribution<float> d(0.0f, 3.0f);
  std::vector<TensorF> batches;
  for (int b = 0; b < 12; ++b) {
    TensorF x({17});
    for (float& v : x.data()) v = d(g);
    batches.push_back(x);
  }
  CalibrationTable ref;
  for (const auto& b : batches) minmax_observe(ref, "s", b);
  for (int perm = 0; perm < 50; ++perm) {
    std::shuffle(batches.begin(), batches.end(), g);
    CalibrationTable t;
    for (const auto& b : batches) minmax_observe(t, "s", b);
    EXPECT_EQ(t, ref);
  }
  // Merging split halves equals one pass.
  CalibrationTable a, b;
  for (std::size_t i = 0; i < batches.size(); ++i) minmax_observe(i % 2 ? a : b, "s", batches[i]);
  a.merge(b);
  EXPECT_EQ(a.amax("s"), ref.amax("s"));
}

TEST(CalibrationTable, MissingEntryNamesSite) {
  CalibrationTable t;
  t.set_amax("a", 1.0f);
  try {
    t.scale("L3.attn.q");
    FAIL();
  } catch (const CalibrationError& e) {
    EXPECT_NE(std::string(e.what()).find("L3.attn.q"), std::string::npos);
  }
  EXPECT_EQ(t.missing({"a", "b", "c"}), (std::vector<std::string>{"b", "c"}));
  EXPECT_THROW(t.set_amax("x", -1.0f), CalibrationError);
}

TEST(CalibrationTable, JsonRoundTripIsExact) {
  CalibrationTable t("abc123");
  t.set_amax("embed.out", 3.14159f);
  t.set_amax("L0.attn.softmax", 0.9999999f);
  t.set_amax("zero", 0.0f);
  const auto path = std::filesystem::temp_directory_path() / "mpinfer_calib_test.json";
  t.save(path);
  const auto back = CalibrationTable::load(path);
  EXPECT_EQ(back, t);
  EXPECT_EQ(back.fingerprint(), "abc123");
  std::filesystem::remove(path);
  EXPECT_THROW(CalibrationTable::from_json(nlohmann::json::parse(R"({"sites":{"a":{}}})")),
               FormatError);
  EXPECT_THROW(CalibrationTable::from_json(nlohmann::json::array()), FormatError);
}

TEST(CodeUsage, Counting) {
  TensorI8 q({640});
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = static_cast<std::int8_t>(i % 64);
  const auto r = code_usage(q, "site");
  EXPECT_EQ(r.used_count(), 64);
  EXPECT_EQ(r.unused_count(), 192);
  EXPECT_EQ(r.unused_percent(), 75.00);
  EXPECT_EQ(r.used_count() + r.unused_count(), 256);
  EXPECT_EQ(r.count(5), 10u);
  EXPECT_EQ(r.count(-5), 0u);
}

TEST(CodeUsage, PublishedPercentages) {
  EXPECT_EQ(CodeUsageReport::unused_percent_of(173), 67.58);
  EXPECT_EQ(CodeUsageReport::unused_percent_of(11), 4.30);
}

TEST(CodeUsage, PercentRecomputesFromCountsForEveryUnusedCount) {
  for (int u = 0; u <= 256; ++u) {
    const double want = std::round(100.0 * u / 256.0 * 100.0) / 100.0;
    EXPECT_EQ(CodeUsageReport::unused_percent_of(u), want);
  }
}

TEST(CodeUsage, SignFlipMirrorsHistogram) {
  std::mt19937 g(5);
  std::normal_distribution<float> d(0.0f, 1.0f);
  TensorF x({5000});
  for (float& v : x.data()) v = d(g);
  TensorF neg = x;
  for (float& v : neg.data()) v = -v;
  const float s = scale_from_amax(max_abs(x.data()));
  const auto a = code_usage(quantize(x, s));
  const auto b = code_usage(quantize(neg, s));
  for (int c = -127; c <= 127; ++c) EXPECT_EQ(a.count(c), b.count(-c)) << c;
  EXPECT_EQ(a.count(-128), 0u);
}
