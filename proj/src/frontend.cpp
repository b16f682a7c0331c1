// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kws/frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <numbers>

#include "kws/errors.hpp"

namespace kws {

namespace {

std::uint32_t u32le(const std::uint8_t* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t u16le(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

}  // namespace

std::vector<double> read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) || std::memcmp(b.data() + 8, "WAVE", 4))
    throw DataError(name + ": not a RIFF/WAVE file");
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t len = u32le(b.data() + pos + 4);
    const std::uint8_t* body = b.data() + pos + 8;
    if (pos + 8 + len > b.size()) throw DataError(name + ": truncated chunk");
    if (!std::memcmp(b.data() + pos, "fmt ", 4)) {
      if (len < 16) throw DataError(name + ": short fmt chunk");
      const auto format = u16le(body), channels = u16le(body + 2), bits = u16le(body + 14);
      const auto rate = u32le(body + 4);
      if (format != 1 || bits != 16) throw DataError(name + ": only 16-bit PCM is supported");
      if (channels != 1) throw DataError(name + ": only mono audio is supported");
      if (rate != kSampleRate)
        throw DataError(name + ": sample rate " + std::to_string(rate) + " Hz, expected 16000");
      have_fmt = true;
    } else if (!std::memcmp(b.data() + pos, "data", 4)) {
      if (!have_fmt) throw DataError(name + ": data chunk before fmt chunk");
      std::vector<double> out(len / 2);
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::int16_t>(u16le(body + 2 * i)) / 32768.0;
      return out;
    }
    pos += 8 + len + (len & 1);
  }
  throw DataError(name + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate) {
  std::vector<std::uint8_t> b;
  const auto data_len = static_cast<std::uint32_t>(samples.size() * 2);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put32(b, 36 + data_len);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(b, 16);
  put16(b, 1);
  put16(b, 1);
  put32(b, static_cast<std::uint32_t>(sample_rate));
  put32(b, static_cast<std::uint32_t>(sample_rate * 2));
  put16(b, 2);
  put16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put32(b, data_len);
  for (double s : samples) {
    const double c = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    put16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(c)));
  }
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

// kMelBins + 2 edge frequencies, evenly spaced on the mel scale.
std::vector<double> mel_edges() {
  const double lo = hz_to_mel(kMelLowHz), hi = hz_to_mel(kMelHighHz);
  std::vector<double> edges(kMelBins + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kMelBins + 1));
  return edges;
}

// [kMelBins × (kFftSize/2 + 1)] triangular weights.
Tensor mel_filterbank() {
  const auto edges = mel_edges();
  const std::size_t bins = kFftSize / 2 + 1;
  Tensor w({kMelBins, bins});
  for (std::size_t m = 0; m < kMelBins; ++m)
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * kSampleRate / static_cast<double>(kFftSize);
      const double a = edges[m], c = edges[m + 1], z = edges[m + 2];
      if (f > a && f <= c) w.at(m, k) = (f - a) / (c - a);
      else if (f > c && f < z) w.at(m, k) = (z - f) / (z - c);
    }
  return w;
}

struct FftwPlan {
  double* in;
  fftw_complex* out;
  fftw_plan plan;
  FftwPlan()
      : in(fftw_alloc_real(kFftSize)),
        out(fftw_alloc_complex(kFftSize / 2 + 1)),
        plan(fftw_plan_dft_r2c_1d(kFftSize, in, out, FFTW_ESTIMATE)) {}
  ~FftwPlan() {
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;
};

}  // namespace

std::vector<double> mel_centers() {
  auto edges = mel_edges();
  return {edges.begin() + 1, edges.end() - 1};
}

Tensor logmel(std::span<const double> samples, int sample_rate) {
  if (sample_rate != kSampleRate)
    throw DataError("extract_logmel: sample rate " + std::to_string(sample_rate) + " Hz, expected 16000");
  if (samples.size() < kWindow)
    throw DataError("extract_logmel: need at least " + std::to_string(kWindow) + " samples, got " +
                    std::to_string(samples.size()));
  const std::size_t frames = (samples.size() - kWindow) / kHop + 1;
  const std::size_t bins = kFftSize / 2 + 1;
  static const Tensor bank = mel_filterbank();
  std::vector<double> window(kWindow);
  for (std::size_t n = 0; n < kWindow; ++n)
    window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / (kWindow - 1));

  FftwPlan fft;
  std::vector<double> power(bins);
  Tensor out({frames, kMelBins});
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(fft.in, fft.in + kFftSize, 0.0);
    for (std::size_t n = 0; n < kWindow; ++n) fft.in[n] = samples[f * kHop + n] * window[n];
    fftw_execute(fft.plan);
    for (std::size_t k = 0; k < bins; ++k)
      power[k] = fft.out[k][0] * fft.out[k][0] + fft.out[k][1] * fft.out[k][1];
    for (std::size_t m = 0; m < kMelBins; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += bank.at(m, k) * power[k];
      out.at(f, m) = std::log(std::max(e, kEnergyFloor));
    }
  }
  return out;
}

Tensor stack_context(const Tensor& frames, std::size_t output_dim) {
  const std::size_t d = frames.cols();
  if (output_dim == 0 || output_dim % d != 0)
    throw DimensionError("stack_context: output dim " + std::to_string(output_dim) +
                         " is not a multiple of " + std::to_string(d));
  const std::size_t k = output_dim / d - 1, n = frames.rows();
  Tensor out({n, output_dim});
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t c = 0; c <= k; ++c) {
      const std::size_t src = t + c >= k ? t + c - k : 0;
      std::copy(frames.row(src).begin(), frames.row(src).end(), out.row(t).begin() + c * d);
    }
  return out;
}

Tensor extract_logmel(std::span<const double> samples, int sample_rate, std::size_t output_dim) {
  return stack_context(logmel(samples, sample_rate), output_dim);
}

}  // namespace kws
