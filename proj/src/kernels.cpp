// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kws/kernels.hpp"

#include <cstdint>
#include <vector>

namespace kws::kernels {

namespace {
// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

std::int64_t as_i64(std::size_t n) { return static_cast<std::int64_t>(n); }
}  // namespace

void matmul(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::int64_t ii = 0; ii < as_i64(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* o = out + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) o[j] = 0.0;
    const double* ar = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

void matmul_bt(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  // Transposing b turns the inner loop into a contiguous axpy; each output
  // still sums over p in ascending order.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  matmul(a, bt.data(), out, m, k, n, accumulate);
}

void matmul_at(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::int64_t ii = 0; ii < as_i64(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* o = out + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) o[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

void time_filter(const double* act, const double* filters, double* out, std::size_t frames,
                 std::size_t nodes, std::size_t memory, bool accumulate) {
#pragma omp parallel for schedule(static) if (frames * nodes * memory > kParallelWork)
  for (std::int64_t ff = 0; ff < as_i64(frames); ++ff) {
    const auto f = static_cast<std::size_t>(ff);
    double* o = out + f * nodes;
    if (!accumulate)
      for (std::size_t n = 0; n < nodes; ++n) o[n] = 0.0;
    for (std::size_t t = 0; t < memory; ++t) {
      // Source frame f - (memory - 1) + t; skip the zero padding.
      if (f + t + 1 < memory) continue;
      const double* src = act + (f + t + 1 - memory) * nodes;
      for (std::size_t n = 0; n < nodes; ++n) o[n] += filters[n * memory + t] * src[n];
    }
  }
}

void time_filter_backward(const double* act, const double* filters, const double* grad_out,
                          double* grad_act, double* grad_filters, std::size_t frames,
                          std::size_t nodes, std::size_t memory) {
  const bool par = frames * nodes * memory > kParallelWork;
  // grad_act[g,n] += Σ_t filters[n,t] · grad_out[g+T-1-t, n]
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t gg = 0; gg < as_i64(frames); ++gg) {
    const auto g = static_cast<std::size_t>(gg);
    double* ga = grad_act + g * nodes;
    for (std::size_t t = 0; t < memory; ++t) {
      const std::size_t f = g + memory - 1 - t;
      if (f >= frames) continue;
      const double* go = grad_out + f * nodes;
      for (std::size_t n = 0; n < nodes; ++n) ga[n] += filters[n * memory + t] * go[n];
    }
  }
  // grad_filters[n,t] += Σ_f grad_out[f,n] · act[f-T+1+t, n]
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t nn = 0; nn < as_i64(nodes); ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    for (std::size_t t = 0; t < memory; ++t) {
      double s = grad_filters[n * memory + t];
      for (std::size_t f = 0; f < frames; ++f) {
        if (f + t + 1 < memory) continue;
        s += grad_out[f * nodes + n] * act[(f + t + 1 - memory) * nodes + n];
      }
      grad_filters[n * memory + t] = s;
    }
  }
}

namespace reference {

void matmul(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? out[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      out[i * n + j] = s;
    }
}

void matmul_bt(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? out[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      out[i * n + j] = s;
    }
}

void matmul_at(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? out[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      out[i * n + j] = s;
    }
}

void time_filter(const double* act, const double* filters, double* out, std::size_t frames,
                 std::size_t nodes, std::size_t memory, bool accumulate) {
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t n = 0; n < nodes; ++n) {
      double s = accumulate ? out[f * nodes + n] : 0.0;
      for (std::size_t t = 0; t < memory; ++t) {
        if (f + t + 1 < memory) continue;
        s += filters[n * memory + t] * act[(f + t + 1 - memory) * nodes + n];
      }
      out[f * nodes + n] = s;
    }
}

void time_filter_backward(const double* act, const double* filters, const double* grad_out,
                          double* grad_act, double* grad_filters, std::size_t frames,
                          std::size_t nodes, std::size_t memory) {
  for (std::size_t g = 0; g < frames; ++g)
    for (std::size_t n = 0; n < nodes; ++n) {
      double s = grad_act[g * nodes + n];
      for (std::size_t t = 0; t < memory; ++t) {
        const std::size_t f = g + memory - 1 - t;
        if (f < frames) s += filters[n * memory + t] * grad_out[f * nodes + n];
      }
      grad_act[g * nodes + n] = s;
    }
  for (std::size_t n = 0; n < nodes; ++n)
    for (std::size_t t = 0; t < memory; ++t) {
      double s = grad_filters[n * memory + t];
      for (std::size_t f = 0; f < frames; ++f)
        if (f + t + 1 >= memory) s += grad_out[f * nodes + n] * act[(f + t + 1 - memory) * nodes + n];
      grad_filters[n * memory + t] = s;
    }
}

}  // namespace reference

}  // namespace kws::kernels
