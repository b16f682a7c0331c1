// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kws/layers.hpp"

namespace kws {

struct EncoderStageConfig {
  std::size_t nodes;
  std::size_t memory;
  std::size_t bottleneck;
  friend bool operator==(const EncoderStageConfig&, const EncoderStageConfig&) = default;
};

struct DecoderStageConfig {
  std::size_t nodes;
  std::size_t memory;
  friend bool operator==(const DecoderStageConfig&, const DecoderStageConfig&) = default;
};

struct KwsModelConfig {
  std::size_t input_dim = 80;
  std::vector<EncoderStageConfig> encoder;
  std::vector<DecoderStageConfig> decoder;
  std::size_t num_classes = 2;
  /// Embedding dimension E when FiLM-conditioned; nullopt for the baseline.
  std::optional<std::size_t> film_embedding_dim;

  bool conditioned() const { return film_embedding_dim.has_value(); }
  /// Width L of the encoder output ("encoding logits").
  std::size_t logits_dim() const;
  void validate() const;

  /// 4 × (SVDF 576 nodes, memory 6, bottleneck 64) encoder,
  /// 3 × (SVDF 32 nodes, memory 32) decoder, 80-dim input.
  static KwsModelConfig full_size(std::optional<std::size_t> embedding_dim = std::nullopt);

  friend bool operator==(const KwsModelConfig&, const KwsModelConfig&) = default;
};

template <class T>
struct EncoderStage {
  SvdfWeights<T> svdf;
  DenseWeights<T> bottleneck;
};

template <class T>
struct ModelWeights {
  std::vector<EncoderStage<T>> encoder;
  std::optional<FilmWeights<T>> film;
  std::vector<SvdfWeights<T>> decoder;
  DenseWeights<T> head;
};

/// Visits every parameter in canonical order as f(name, tensor). The order
/// and names define the checkpoint layout and optimizer state layout.
template <class W, class F>
void for_each_param(W& w, F&& f) {
  for (std::size_t i = 0; i < w.encoder.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i) + ".";
    f(p + "svdf.feature_filters", w.encoder[i].svdf.feature_filters);
    f(p + "svdf.time_filters", w.encoder[i].svdf.time_filters);
    f(p + "svdf.bias", w.encoder[i].svdf.bias);
    f(p + "bottleneck.weights", w.encoder[i].bottleneck.weights);
    f(p + "bottleneck.bias", w.encoder[i].bottleneck.bias);
  }
  if (w.film) {
    f(std::string("film.w_gamma"), w.film->w_gamma);
    f(std::string("film.b_gamma"), w.film->b_gamma);
    f(std::string("film.w_beta"), w.film->w_beta);
    f(std::string("film.b_beta"), w.film->b_beta);
  }
  for (std::size_t i = 0; i < w.decoder.size(); ++i) {
    const std::string p = "decoder." + std::to_string(i) + ".";
    f(p + "svdf.feature_filters", w.decoder[i].feature_filters);
    f(p + "svdf.time_filters", w.decoder[i].time_filters);
    f(p + "svdf.bias", w.decoder[i].bias);
  }
  f(std::string("head.weights"), w.head.weights);
  f(std::string("head.bias"), w.head.bias);
}

/// Structure-preserving map; f(const T&) -> U.
template <class U, class T, class F>
ModelWeights<U> map_weights(const ModelWeights<T>& w, F&& f) {
  auto svdf = [&](const SvdfWeights<T>& s) {
    return SvdfWeights<U>{f(s.feature_filters), f(s.time_filters), f(s.bias)};
  };
  auto dense = [&](const DenseWeights<T>& d) {
    return DenseWeights<U>{f(d.weights), f(d.bias), d.activation};
  };
  ModelWeights<U> out;
  for (const auto& e : w.encoder) out.encoder.push_back({svdf(e.svdf), dense(e.bottleneck)});
  if (w.film)
    out.film = FilmWeights<U>{f(w.film->w_gamma), f(w.film->b_gamma), f(w.film->w_beta),
                              f(w.film->b_beta)};
  for (const auto& d : w.decoder) out.decoder.push_back(svdf(d));
  out.head = dense(w.head);
  return out;
}

struct KwsModel {
  KwsModelConfig config;
  ModelWeights<Tensor> weights;
};

struct ParamBreakdown {
  std::size_t encoder = 0;
  std::size_t film = 0;
  std::size_t decoder = 0;
  std::size_t head = 0;
  std::size_t total() const { return encoder + film + decoder + head; }
};

/// Deterministic given the seed. FiLM starts at the identity modulation.
KwsModel build_model(const KwsModelConfig& config, std::uint64_t seed);

/// Counts the tensors actually held by the model.
ParamBreakdown count_params(const KwsModel& m);

/// Closed form from the configuration alone:
///   encoder stage i: N_i·(D_i + T_i + 1) + B_i·(N_i + 1), D_0 = input_dim, D_i = B_{i-1}
///   FiLM:            2·L·(E + 1), L = B_last
///   decoder stage j: M_j·(D_j + S_j + 1), D_0 = L, D_j = M_{j-1}
///   head:            C·(M_last + 1)
ParamBreakdown closed_form_params(const KwsModelConfig& config);

/// Tape forward. `embedding` is [1×E] and required iff the model is
/// conditioned. Returns per-frame logits [F×C].
ad::Var forward(const ModelWeights<ad::Var>& w, ad::Var x, std::optional<ad::Var> embedding);

ModelWeights<ad::Var> bind(ad::Tape& tape, const ModelWeights<Tensor>& w);

/// Frame logits for x[F×D_in]. Throws UsageError when a conditioned model is
/// given no embedding; callers without an enrollment pass the constant
/// vector instead.
Tensor forward_logits(const KwsModel& m, const Tensor& x,
                      const std::optional<Tensor>& embedding = std::nullopt);
/// Row-wise softmax of forward_logits.
Tensor forward_posteriors(const KwsModel& m, const Tensor& x,
                          const std::optional<Tensor>& embedding = std::nullopt);

/// Frame-by-frame inference with gamma/beta fixed for the session.
class StreamSession {
 public:
  StreamSession(const KwsModel& model, const std::optional<Tensor>& embedding);

  /// Class posteriors for the next frame.
  Tensor step(const Tensor& frame);
  void reset();

  std::size_t frames() const { return frames_; }
  const KwsModel* model() const { return model_; }
  const std::optional<Tensor>& gamma() const { return gamma_; }
  const std::optional<Tensor>& beta() const { return beta_; }

 private:
  const KwsModel* model_;
  std::vector<SvdfState> encoder_states_;
  std::vector<SvdfState> decoder_states_;
  std::optional<Tensor> gamma_;
  std::optional<Tensor> beta_;
  std::size_t frames_ = 0;
};

/// Checks that `session` was opened on `m`, then advances it by one frame.
Tensor stream_step(const KwsModel& m, StreamSession& session, const Tensor& frame);

}  // namespace kws
