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
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "mpinfer/errors.hpp"
#include "mpinfer/tensor.hpp"

namespace mpinfer {

// ---------------------------------------------------------------------------
// Runtime switches
// ---------------------------------------------------------------------------

namespace detail {

inline std::atomic<int>& naive_override() {
  static std::atomic<int> v{-1};  // -1: follow the environment
  return v;
}

inline bool naive_from_env() {
  static const bool on = [] {
    const char* v = std::getenv("SAMP_NAIVE_KERNELS");
    return v != nullptr && std::string_view(v) == "1";
  }();
  return on;
}

inline std::atomic<int>& thread_count() {
  static std::atomic<int> n{1};
  return n;
}

}  // namespace detail

// True when the reference triple-loop kernels are forced, either through
// SAMP_NAIVE_KERNELS=1 or set_naive_kernels(true).
inline bool naive_kernels() {
  const int o = detail::naive_override().load(std::memory_order_relaxed);
  return o < 0 ? detail::naive_from_env() : o == 1;
}

// std::nullopt restores the environment default.
inline void set_naive_kernels(std::optional<bool> on) {
  detail::naive_override().store(on ? (*on ? 1 : 0) : -1);
}

inline int num_threads() { return detail::thread_count().load(); }
inline void set_num_threads(int n) { detail::thread_count().store(std::max(1, n)); }

// Runs fn(begin, end) over [0, n), split into contiguous row ranges. Rows are
// independent, so results do not depend on the thread count.
template <typename Fn>
void parallel_rows(std::size_t n, std::size_t work_per_row, Fn&& fn) {
  const std::size_t threads =
      std::min<std::size_t>(static_cast<std::size_t>(num_threads()), n);
  if (threads <= 1 || n * work_per_row < (1u << 15)) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(threads - 1);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
}

// ---------------------------------------------------------------------------
// Operation counters
// ---------------------------------------------------------------------------

// Per-thread tallies of GEMM invocations and operand traffic. A batched
// attention GEMM counts once regardless of the head count.
struct KernelCounters {
  std::uint64_t f32_gemms = 0;
  std::uint64_t i8_gemms = 0;
  std::uint64_t f32_gemm_bytes = 0;
  std::uint64_t i8_gemm_bytes = 0;
  std::uint64_t quantize_calls = 0;
  std::uint64_t dequantize_calls = 0;

  std::uint64_t gemm_bytes() const { return f32_gemm_bytes + i8_gemm_bytes; }

  friend KernelCounters operator-(KernelCounters a, const KernelCounters& b) {
    a.f32_gemms -= b.f32_gemms;
    a.i8_gemms -= b.i8_gemms;
    a.f32_gemm_bytes -= b.f32_gemm_bytes;
    a.i8_gemm_bytes -= b.i8_gemm_bytes;
    a.quantize_calls -= b.quantize_calls;
    a.dequantize_calls -= b.dequantize_calls;
    return a;
  }
  friend bool operator==(const KernelCounters&, const KernelCounters&) = default;
};

inline KernelCounters& counters() {
  thread_local KernelCounters c;
  return c;
}

// Captures the counter delta over its lifetime on the current thread.
class CounterScope {
 public:
  CounterScope() : start_(counters()) {}
  KernelCounters delta() const { return counters() - start_; }

 private:
  KernelCounters start_;
};

// ---------------------------------------------------------------------------
// GEMM
// ---------------------------------------------------------------------------

namespace naive {

// Reference kernels: one output element at a time, k innermost.
inline void gemm_f32(std::span<const float> a, std::span<const float> b,
                     std::span<float> c, std::size_t m, std::size_t k,
                     std::size_t n, bool b_transposed) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float sum = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) {
        const float bv = b_transposed ? b[j * k + p] : b[p * n + j];
        sum += a[i * k + p] * bv;
      }
      c[i * n + j] = sum;
    }
  }
}

inline void gemm_i8_i32(std::span<const std::int8_t> a,
                        std::span<const std::int8_t> b,
                        std::span<std::int32_t> c, std::size_t m, std::size_t k,
                        std::size_t n, bool b_transposed) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      std::int32_t sum = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const std::int32_t bv = b_transposed ? b[j * k + p] : b[p * n + j];
        sum += static_cast<std::int32_t>(a[i * k + p]) * bv;
      }
      c[i * n + j] = sum;
    }
  }
}

}  // namespace naive

namespace detail {

inline constexpr std::size_t kColTile = 256;

// Row-streaming kernel: for each output row, a column tile of accumulators is
// updated once per k in ascending order. Every output element therefore sees
// the same addition sequence as the naive kernel and the results are bitwise
// equal.
template <typename In, typename Acc>
void gemm_rows(const In* a, const In* b, Acc* c, std::size_t row_begin,
               std::size_t row_end, std::size_t k, std::size_t n) {
  for (std::size_t i = row_begin; i < row_end; ++i) {
    const In* arow = a + i * k;
    Acc* crow = c + i * n;
    for (std::size_t j0 = 0; j0 < n; j0 += kColTile) {
      const std::size_t j1 = std::min(n, j0 + kColTile);
      for (std::size_t p = 0; p < k; ++p) {
        const Acc av = static_cast<Acc>(arow[p]);
        const In* brow = b + p * n;
        for (std::size_t j = j0; j < j1; ++j) {
          crow[j] += av * static_cast<Acc>(brow[j]);
        }
      }
    }
  }
}

// B stored as n x k: plain dot products, k innermost.
template <typename In, typename Acc>
void gemm_rows_bt(const In* a, const In* b, Acc* c, std::size_t row_begin,
                  std::size_t row_end, std::size_t k, std::size_t n) {
  for (std::size_t i = row_begin; i < row_end; ++i) {
    const In* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const In* brow = b + j * k;
      Acc sum = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) {
        sum += static_cast<Acc>(arow[p]) * static_cast<Acc>(brow[p]);
      }
      c[i * n + j] = sum;
    }
  }
}

template <typename In, typename Acc>
void gemm_dispatch(std::span<const In> a, std::span<const In> b,
                   std::span<Acc> c, std::size_t m, std::size_t k,
                   std::size_t n, bool b_transposed) {
  if (naive_kernels()) {
    if constexpr (std::is_same_v<In, float>) {
      naive::gemm_f32(a, b, c, m, k, n, b_transposed);
    } else {
      naive::gemm_i8_i32(a, b, c, m, k, n, b_transposed);
    }
    return;
  }
  parallel_rows(m, k * n, [&](std::size_t rb, std::size_t re) {
    if (b_transposed) {
      gemm_rows_bt<In, Acc>(a.data(), b.data(), c.data(), rb, re, k, n);
    } else {
      gemm_rows<In, Acc>(a.data(), b.data(), c.data(), rb, re, k, n);
    }
  });
}

template <typename In, typename Out>
std::uint64_t gemm_traffic(std::size_t m, std::size_t k, std::size_t n) {
  return static_cast<std::uint64_t>(m * k + k * n) * sizeof(In) +
         static_cast<std::uint64_t>(m * n) * sizeof(Out);
}

inline void check_inner(std::size_t ka, std::size_t kb, const Shape& a,
                        const Shape& b) {
  if (ka != kb) {
    throw DimensionError(detail::concat("gemm inner dimensions disagree: ",
                                        shape_string(a), " x ", shape_string(b)));
  }
}

}  // namespace detail

struct GemmDims {
  std::size_t m;
  std::size_t k;
  std::size_t n;
};

// C = accumulate_into + A x B with FP32 accumulation.
inline TensorF gemm_f32(const TensorF& a, const TensorF& b,
                        const TensorF* accumulate_into = nullptr) {
  require_rank(a, 2, "gemm_f32 lhs");
  require_rank(b, 2, "gemm_f32 rhs");
  detail::check_inner(a.cols(), b.rows(), a.shape(), b.shape());
  const GemmDims d{a.rows(), a.cols(), b.cols()};
  TensorF c({d.m, d.n});
  if (accumulate_into != nullptr) {
    if (accumulate_into->shape() != c.shape()) {
      throw DimensionError("gemm_f32 accumulator shape " +
                           shape_string(accumulate_into->shape()) +
                           " != " + shape_string(c.shape()));
    }
    c = *accumulate_into;
  }
  detail::gemm_dispatch<float, float>(a.data(), b.data(), c.data(), d.m, d.k,
                                      d.n, false);
  auto& cnt = counters();
  ++cnt.f32_gemms;
  cnt.f32_gemm_bytes += detail::gemm_traffic<float, float>(d.m, d.k, d.n);
  return c;
}

// Exact INT8 x INT8 product with INT32 accumulation. No saturation is possible
// while k <= 131072.
inline TensorI32 gemm_i8_i32(const TensorI8& a, const TensorI8& b) {
  require_rank(a, 2, "gemm_i8_i32 lhs");
  require_rank(b, 2, "gemm_i8_i32 rhs");
  detail::check_inner(a.cols(), b.rows(), a.shape(), b.shape());
  const GemmDims d{a.rows(), a.cols(), b.cols()};
  TensorI32 c({d.m, d.n});
  detail::gemm_dispatch<std::int8_t, std::int32_t>(a.data(), b.data(), c.data(),
                                                   d.m, d.k, d.n, false);
  auto& cnt = counters();
  ++cnt.i8_gemms;
  cnt.i8_gemm_bytes += detail::gemm_traffic<std::int8_t, std::int32_t>(d.m, d.k, d.n);
  return c;
}

namespace detail {

template <typename In, typename Out>
Tensor<Out> batched_gemm(const Tensor<In>& a, const Tensor<In>& b,
                         bool b_transposed) {
  require_rank(a, 3, "batched gemm lhs");
  require_rank(b, 3, "batched gemm rhs");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("batched gemm batch sizes disagree: " +
                         shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t batch = a.dim(0);
  const std::size_t m = a.dim(1);
  const std::size_t k = a.dim(2);
  const std::size_t kb = b_transposed ? b.dim(2) : b.dim(1);
  const std::size_t n = b_transposed ? b.dim(1) : b.dim(2);
  check_inner(k, kb, a.shape(), b.shape());
  Tensor<Out> c({batch, m, n});
  for (std::size_t h = 0; h < batch; ++h) {
    gemm_dispatch<In, Out>(a.data().subspan(h * m * k, m * k),
                           b.data().subspan(h * k * n, k * n),
                           c.data().subspan(h * m * n, m * n), m, k, n,
                           b_transposed);
  }
  auto& cnt = counters();
  if constexpr (std::is_same_v<In, float>) {
    ++cnt.f32_gemms;
    cnt.f32_gemm_bytes += batch * gemm_traffic<In, Out>(m, k, n);
  } else {
    ++cnt.i8_gemms;
    cnt.i8_gemm_bytes += batch * gemm_traffic<In, Out>(m, k, n);
  }
  return c;
}

}  // namespace detail

// Per-head products over [batch x m x k] and [batch x k x n] (or
// [batch x n x k] when b_transposed). Counted as a single GEMM invocation.
inline TensorF batched_gemm_f32(const TensorF& a, const TensorF& b,
                                bool b_transposed = false) {
  return detail::batched_gemm<float, float>(a, b, b_transposed);
}

inline TensorI32 batched_gemm_i8_i32(const TensorI8& a, const TensorI8& b,
                                     bool b_transposed = false) {
  return detail::batched_gemm<std::int8_t, std::int32_t>(a, b, b_transposed);
}

// ---------------------------------------------------------------------------
// Elementwise and row kernels
// ---------------------------------------------------------------------------

inline void softmax_row(std::span<float> row) {
  float mx = -std::numeric_limits<float>::infinity();
  bool has_nan = false;
  for (float v : row) {
    if (std::isnan(v)) has_nan = true;
    if (v > mx) mx = v;
  }
  if (has_nan) {
    std::fill(row.begin(), row.end(), std::numeric_limits<float>::quiet_NaN());
    return;
  }
  float sum = 0.0f;
  for (float& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  const float inv = 1.0f / sum;
  for (float& v : row) v *= inv;
}

// Row-wise softmax over the last dimension. A NaN anywhere in a row turns the
// whole row into NaN.
inline TensorF softmax_rows(TensorF x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  parallel_rows(rows, n, [&](std::size_t rb, std::size_t re) {
    for (std::size_t r = rb; r < re; ++r) softmax_row(x.data().subspan(r * n, n));
  });
  return x;
}

inline constexpr float kDefaultLayerNormEps = 1e-12f;

inline void layernorm_row(std::span<float> row, std::span<const float> gamma,
                          std::span<const float> beta, float eps) {
  const std::size_t h = row.size();
  double mean = 0.0;
  for (float v : row) mean += v;
  mean /= static_cast<double>(h);
  double var = 0.0;
  for (float v : row) {
    const double d = v - mean;
    var += d * d;
  }
  var /= static_cast<double>(h);
  const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(eps));
  for (std::size_t j = 0; j < h; ++j) {
    const double norm = (row[j] - mean) * inv_std;
    row[j] = static_cast<float>(norm * gamma[j] + beta[j]);
  }
}

inline TensorF layernorm(TensorF x, const TensorF& gamma, const TensorF& beta,
                         float eps = kDefaultLayerNormEps) {
  const std::size_t h = x.shape().back();
  if (gamma.size() != h || beta.size() != h) {
    throw DimensionError(detail::concat("layernorm width ", h, " vs gamma ",
                                        gamma.size(), " / beta ", beta.size()));
  }
  const std::size_t rows = x.size() / h;
  for (std::size_t r = 0; r < rows; ++r) {
    layernorm_row(x.data().subspan(r * h, h), gamma.data(), beta.data(), eps);
  }
  return x;
}

// tanh approximation, as in the original BERT code.
inline float gelu(float x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + 0.044715f * x * x * x)));
}

inline TensorF gelu(TensorF x) {
  for (float& v : x.data()) v = gelu(v);
  return x;
}

inline void add_bias_inplace(TensorF& x, const TensorF& bias) {
  const std::size_t h = x.shape().back();
  if (bias.size() != h) {
    throw DimensionError(detail::concat("bias width ", bias.size(), " != ", h));
  }
  const std::size_t rows = x.size() / h;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < h; ++j) x[r * h + j] += bias[j];
  }
}

// x + broadcast(bias) + residual, added in that order.
inline TensorF add_bias_residual(TensorF x, const TensorF& bias,
                                 const TensorF& residual) {
  if (x.shape() != residual.shape()) {
    throw DimensionError("residual shape " + shape_string(residual.shape()) +
                         " != " + shape_string(x.shape()));
  }
  add_bias_inplace(x, bias);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += residual[i];
  return x;
}

// [s x h] -> [heads x s x h/heads]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t num_heads) {
  require_rank(x, 2, "split_heads");
  const std::size_t s = x.rows();
  const std::size_t h = x.cols();
  if (num_heads == 0 || h % num_heads != 0) {
    throw ConfigError(detail::concat("hidden size ", h,
                                     " is not divisible by num_heads ", num_heads));
  }
  const std::size_t d = h / num_heads;
  Tensor<T> out({num_heads, s, d});
  for (std::size_t hd = 0; hd < num_heads; ++hd) {
    for (std::size_t t = 0; t < s; ++t) {
      for (std::size_t c = 0; c < d; ++c) out(hd, t, c) = x(t, hd * d + c);
    }
  }
  return out;
}

// [heads x s x d] -> [s x heads*d]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  require_rank(x, 3, "merge_heads");
  const std::size_t heads = x.dim(0);
  const std::size_t s = x.dim(1);
  const std::size_t d = x.dim(2);
  Tensor<T> out({s, heads * d});
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t t = 0; t < s; ++t) {
      for (std::size_t c = 0; c < d; ++c) out(t, hd * d + c) = x(hd, t, c);
    }
  }
  return out;
}

// Column block [col, col+width) of a matrix.
template <typename T>
Tensor<T> column_slice(const Tensor<T>& x, std::size_t col, std::size_t width) {
  require_rank(x, 2, "column_slice");
  if (col + width > x.cols()) throw DimensionError("column slice out of range");
  Tensor<T> out({x.rows(), width});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy_n(x.row(r).begin() + static_cast<std::ptrdiff_t>(col), width,
                out.row(r).begin());
  }
  return out;
}

// Horizontal concatenation of matrices with equal row counts.
template <typename T>
Tensor<T> concat_columns(std::initializer_list<const Tensor<T>*> parts) {
  std::size_t rows = 0;
  std::size_t cols = 0;
  for (const auto* p : parts) {
    require_rank(*p, 2, "concat_columns");
    if (cols == 0) rows = p->rows();
    if (p->rows() != rows) throw DimensionError("concat_columns row mismatch");
    cols += p->cols();
  }
  Tensor<T> out({rows, cols});
  std::size_t off = 0;
  for (const auto* p : parts) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(p->row(r).begin(), p->row(r).end(),
                out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
    }
    off += p->cols();
  }
  return out;
}

// Round-to-nearest-even onto the IEEE binary16 grid, returned as float.
// Models half-precision storage between kernels while arithmetic stays FP32.
inline float round_to_half(float x) {
  if (!std::isfinite(x)) return x;
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
  const std::uint32_t sign = bits & 0x80000000u;
  const float ax = std::fabs(x);
  if (ax >= 65520.0f) {
    return std::bit_cast<float>(sign | 0x7f800000u);
  }
  // Subnormal halves are multiples of 2^-24; everything at or above 2^-14
  // keeps 10 fraction bits.
  constexpr float kMinNormal = 6.103515625e-05f;  // 2^-14
  if (ax < kMinNormal) {
    constexpr float kStep = 5.9604644775390625e-08f;  // 2^-24
    const float q = std::nearbyint(ax / kStep) * kStep;
    return sign ? -q : q;
  }
  std::uint32_t mag = bits & 0x7fffffffu;
  const std::uint32_t lsb = (mag >> 13) & 1u;
  mag += 0x0fffu + lsb;
  mag &= ~0x1fffu;
  return std::bit_cast<float>(sign | mag);
}

inline void round_to_half_inplace(TensorF& x) {
  for (float& v : x.data()) v = round_to_half(v);
}

}  // namespace mpinfer
