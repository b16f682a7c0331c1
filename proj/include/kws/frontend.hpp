// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "kws/tensor.hpp"

namespace kws {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kWindow = 400;  // 25 ms
inline constexpr std::size_t kHop = 160;     // 10 ms
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kMelBins = 40;
inline constexpr double kMelLowHz = 125.0;
inline constexpr double kMelHighHz = 7500.0;
inline constexpr double kEnergyFloor = 1e-10;

/// RIFF/WAVE, PCM 16-bit, mono, 16 kHz. Anything else is a DataError.
/// Samples are scaled to [-1, 1).
std::vector<double> read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               int sample_rate = kSampleRate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// Center frequencies (Hz) of the triangular mel filters.
std::vector<double> mel_centers();

/// Log-mel energies [frames × 40], frames = (N - 400) / 160 + 1.
Tensor logmel(std::span<const double> samples, int sample_rate = kSampleRate);

/// Concatenates each frame with its k = output_dim/40 - 1 predecessors
/// (oldest first), repeating the first frame at the start.
Tensor stack_context(const Tensor& frames, std::size_t output_dim);

/// logmel followed by stack_context.
Tensor extract_logmel(std::span<const double> samples, int sample_rate = kSampleRate,
                      std::size_t output_dim = kMelBins);

}  // namespace kws
