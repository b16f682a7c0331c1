// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kws/autodiff.hpp"

namespace kws {

/// Builds a scalar loss on `tape` from leaves bound to the given parameters.
using LossBuilder = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> params)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = false;
};

/// Relative error used throughout: |a-n| / max(|a|, |n|, 1e-6). The floor
/// keeps exactly-zero gradients (dead ReLUs, unused inputs) from turning
/// round-off into a spurious failure.
double gradient_rel_error(double analytic, double numeric);

/// Compares tape gradients with central differences for every element of
/// every parameter. eps must lie in [1e-7, 1e-3]. Throws NumericError naming
/// the first op that produced a non-finite value.
GradCheckReport grad_check(const LossBuilder& f, std::vector<Tensor> params, double eps,
                           double tol);

}  // namespace kws
