// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "kws/data.hpp"
#include "kws/eval.hpp"
#include "kws/train.hpp"

// One JSON document configures every command:
//
//   {
//     "seed": 3,                  master seed, optional
//     "corpus": { ... },          corpus generator settings
//     "train": { ... },           training settings (variant, steps, model, ...)
//     "eval": { ... },            scoring settings
//     "paths": { "corpus": "...", "out": "...", "checkpoint": "..." }
//   }
//
// Every key is optional and unknown keys are rejected. Values resolve as
// command-line flag > config file > built-in default.

namespace kws::cli {

struct EvalSettings {
  Condition condition = Condition::with_embedding;
  std::size_t smooth_window = 10;
  MissingEnrollment missing_enrollment = MissingEnrollment::constant_vector;
  Split split = Split::eval;
  /// Checkpoint file used when a run directory is given: "final" or "best".
  std::string checkpoint = "final";
  /// Overrides the variant recorded in the checkpoint.
  std::optional<Variant> variant;
  /// Enrollment pairing seed; the checkpoint's training seed when unset.
  std::optional<std::uint64_t> seed;
};

struct Paths {
  std::string corpus;
  std::string out;
  std::string checkpoint;
};

struct RunConfig {
  /// When set, replaces corpus.seed, train.seed and eval.seed.
  std::optional<std::uint64_t> seed;
  CorpusConfig corpus = CorpusConfig::defaults();
  TrainConfig train;
  EvalSettings eval;
  Paths paths;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
/// Throws ConfigError when the file is unreadable or not valid JSON.
RunConfig load_run_config(const std::filesystem::path& path);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> corpus;
  std::optional<std::string> checkpoint;
  std::optional<Variant> variant;
  std::optional<double> robust_prob;
  std::optional<Condition> condition;
};

/// Defaults, then the config file (when given), then the flags.
RunConfig resolve(const std::optional<std::filesystem::path>& config, const Overrides& flags);

/// Writes <dir>/config.resolved.json.
void write_snapshot(const RunConfig& c, const std::filesystem::path& dir);

}  // namespace kws::cli
