// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kws/model.hpp"

// Binary tensor container shared by checkpoints, training state and corpus
// feature files. Layout (all integers little-endian):
//
//   magic      8 bytes  "KWSTENS\0"
//   version    u32
//   json_len   u64, followed by the header as canonical JSON (sorted keys)
//   count      u32
//   directory  count × { name_len u32, name, rank u32, dims u64[rank], offset u64 }
//   data       f64 arrays, offsets relative to the start of this section
//   checksum   u64 FNV-1a over every preceding byte

namespace kws {

inline constexpr std::uint32_t kTensorFileVersion = 1;

struct TensorFile {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& file);
/// Throws CorruptFileError on truncation/checksum failure and
/// VersionMismatchError on an unknown format version.
TensorFile decode_tensor_file(std::span<const std::uint8_t> bytes);

/// Writes through a temporary file and renames, so readers never observe a
/// partial file.
void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const KwsModelConfig& c);
/// Rejects unknown keys.
KwsModelConfig model_config_from_json(const nlohmann::json& j);

struct CheckpointInfo {
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  /// Free-form provenance (variant, robust_prob, corpus id, ...).
  nlohmann::json extra = nlohmann::json::object();
};

TensorFile model_to_tensor_file(const KwsModel& m, const CheckpointInfo& info);
KwsModel model_from_tensor_file(const TensorFile& f, CheckpointInfo* info = nullptr);

void save_model(const KwsModel& m, const std::filesystem::path& path,
                const CheckpointInfo& info = {});
KwsModel load_model(const std::filesystem::path& path, CheckpointInfo* info = nullptr);
/// As load_model, and throws ShapeMismatchError unless the stored
/// configuration equals `expected`.
KwsModel load_model(const std::filesystem::path& path, const KwsModelConfig& expected,
                    CheckpointInfo* info = nullptr);

}  // namespace kws
