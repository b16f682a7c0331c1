// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

// Dense inner loops used by the autodiff ops and the streaming path.
//
// Every kernel exists twice: the OpenMP version in kws::kernels and a plain
// serial version in kws::kernels::reference. Both sum each output element in
// the same order, so results agree bitwise regardless of thread count; tests
// check that and the benchmark target compares their speed.
//
// All matrices are row-major. When `accumulate` is true the result is added
// to `out`, otherwise `out` is overwritten.

namespace kws::kernels {

/// out[m×n] (+)= a[m×k] · b[k×n]
void matmul(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate = false);

/// out[m×n] (+)= a[m×k] · b[n×k]ᵀ
void matmul_bt(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate = false);

/// out[m×n] (+)= a[k×m]ᵀ · b[k×n]
void matmul_at(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate = false);

/// Causal per-node FIR over time:
///   out[f,n] (+)= Σ_{t<T} filters[n,t] · act[f-T+1+t, n],  act[<0] = 0
void time_filter(const double* act, const double* filters, double* out, std::size_t frames,
                 std::size_t nodes, std::size_t memory, bool accumulate = false);

/// Adjoints of time_filter. Always accumulates into grad_act and grad_filters.
void time_filter_backward(const double* act, const double* filters, const double* grad_out,
                          double* grad_act, double* grad_filters, std::size_t frames,
                          std::size_t nodes, std::size_t memory);

namespace reference {

void matmul(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate = false);
void matmul_bt(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate = false);
void matmul_at(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate = false);
void time_filter(const double* act, const double* filters, double* out, std::size_t frames,
                 std::size_t nodes, std::size_t memory, bool accumulate = false);
void time_filter_backward(const double* act, const double* filters, const double* grad_out,
                          double* grad_act, double* grad_filters, std::size_t frames,
                          std::size_t nodes, std::size_t memory);

}  // namespace reference

}  // namespace kws::kernels
