// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "kws/tensor.hpp"

namespace kws {

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Named sub-seed: all randomness derives from one master seed through
/// hash(master, purpose[, index...]), so streams never couple across modules.
std::uint64_t sub_seed(std::uint64_t master, std::string_view purpose);
std::uint64_t sub_seed(std::uint64_t master, std::string_view purpose, std::uint64_t index);
std::uint64_t sub_seed(std::uint64_t master, std::string_view purpose, std::string_view key);

/// mt19937_64 with distributions written out by hand. The std:: distribution
/// objects are implementation-defined, which would make corpora differ
/// between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// Standard normal (Box-Muller, one value per call).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  Tensor normal_tensor(Shape shape, double stddev = 1.0);

 private:
  std::mt19937_64 engine_;
};

}  // namespace kws
