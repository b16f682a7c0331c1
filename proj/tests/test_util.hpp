// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "kws/rng.hpp"
#include "kws/tensor.hpp"

namespace kws::test {

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  return rng.normal_tensor(std::move(shape), scale);
}

inline Tensor row_of(const Tensor& m, std::size_t r) {
  return Tensor({m.cols()}, std::vector<double>(m.row(r).begin(), m.row(r).end()));
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("kwsfilm-" + tag + "-" + std::to_string(Rng(std::random_device{}()).next()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace kws::test
