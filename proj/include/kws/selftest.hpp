// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Built-in correctness suites shared by `kws selftest` and the acceptance
// binary: finite-difference gradients, streaming against batch forward and
// the FiLM identity at initialization.

namespace kws {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// One result per component: svdf, dense, film, softmax_ce, full_model.
std::vector<SuiteResult> run_gradient_suite(std::uint64_t seed = 1);
/// `cases` random small models plus the full-size model.
SuiteResult run_streaming_suite(std::uint64_t seed = 1, int cases = 100);
SuiteResult run_film_identity_suite(std::uint64_t seed = 1, int cases = 50);

std::vector<SuiteResult> run_selftest(std::uint64_t seed = 1);

}  // namespace kws
