// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace kws {

// Error hierarchy. The CLI maps the three top-level families (config, data,
// runtime) onto distinct exit codes.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RuntimeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or layer shapes.
struct DimensionError : RuntimeError {
  using RuntimeError::RuntimeError;
};

/// Invalid argument values (labels out of range, empty score lists, ...).
struct ValidationError : RuntimeError {
  using RuntimeError::RuntimeError;
};

/// NaN/Inf produced during a forward pass.
struct NumericError : RuntimeError {
  using RuntimeError::RuntimeError;
};

/// A conditioned model was asked to run without any embedding object.
struct UsageError : RuntimeError {
  using RuntimeError::RuntimeError;
};

struct CorruptFileError : DataError {
  using DataError::DataError;
};

struct VersionMismatchError : DataError {
  using DataError::DataError;
};

/// Checkpoint contents do not fit the expected model configuration.
struct ShapeMismatchError : DataError {
  using DataError::DataError;
};

/// A cross-enrollment lookup found no enrollment for the speaker.
struct NoEnrollmentError : DataError {
  explicit NoEnrollmentError(std::string speaker)
      : DataError("no enrollment for speaker " + speaker), speaker_id(std::move(speaker)) {}
  std::string speaker_id;
};

}  // namespace kws
