// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kws/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "kws/errors.hpp"

namespace kws {

namespace {

double run(const LossBuilder& f, const std::vector<Tensor>& params, bool with_grads,
           std::vector<Tensor>* grads) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  ad::Var loss = f(tape, leaves);
  if (loss.value().size() != 1) throw DimensionError("grad_check: loss must be a scalar");
  const double value = loss.value()[0];
  if (!std::isfinite(value)) {
    auto op = tape.first_non_finite();
    throw NumericError("grad_check: non-finite loss, first produced by op '" +
                       op.value_or("unknown") + "'");
  }
  if (with_grads) {
    tape.backward(loss);
    grads->clear();
    for (auto v : leaves) grads->push_back(v.grad());
  }
  return value;
}

}  // namespace

double gradient_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const LossBuilder& f, std::vector<Tensor> params, double eps,
                           double tol) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw ValidationError("grad_check: eps must lie in [1e-7, 1e-3]");
  std::vector<Tensor> analytic;
  run(f, params, true, &analytic);

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p][i];
      params[p][i] = orig + eps;
      const double up = run(f, params, false, nullptr);
      params[p][i] = orig - eps;
      const double down = run(f, params, false, nullptr);
      params[p][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      const double rel = gradient_rel_error(a, numeric);
      report.max_abs_error = std::max(report.max_abs_error, std::abs(a - numeric));
      if (rel > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = std::max(rel, report.max_rel_error);
        report.worst_param = p;
        report.worst_index = i;
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace kws
