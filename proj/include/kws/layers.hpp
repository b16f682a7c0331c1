// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <utility>

#include "kws/autodiff.hpp"
#include "kws/rng.hpp"
#include "kws/tensor.hpp"

// Layer parameter structs are templated on the storage type so the same
// layout serves as concrete weights (Tensor), tape bindings (ad::Var),
// gradients and optimizer moments.

namespace kws {

enum class Activation { none, relu };

/// Rank-1 factorized time-windowed layer:
///   a[f,n] = feature_filters[n] · x[f]
///   y[f,n] = relu(Σ_t time_filters[n,t] · a[f-T+1+t, n] + bias[n])
template <class T>
struct SvdfWeights {
  T feature_filters;  // [N×D]
  T time_filters;     // [N×T]
  T bias;             // [N]
};

template <class T>
struct DenseWeights {
  T weights;  // [out×in]
  T bias;     // [out]
  Activation activation = Activation::none;
};

/// FiLM projections: gamma = w_gamma·e + b_gamma, beta = w_beta·e + b_beta.
template <class T>
struct FilmWeights {
  T w_gamma;  // [L×E]
  T b_gamma;  // [L]
  T w_beta;   // [L×E]
  T b_beta;   // [L]
};

using SvdfLayerParams = SvdfWeights<Tensor>;
using DenseParams = DenseWeights<Tensor>;
using FilmParams = FilmWeights<Tensor>;

// ---- construction ----------------------------------------------------------

/// Glorot-uniform weights, zero bias.
SvdfLayerParams make_svdf(std::size_t nodes, std::size_t input_dim, std::size_t memory, Rng& rng);
DenseParams make_dense(std::size_t out, std::size_t in, Activation act, Rng& rng);
/// Zero projections with b_gamma = 1, b_beta = 0: the identity modulation
/// for every embedding.
FilmParams make_film(std::size_t logits_dim, std::size_t embedding_dim);

/// Uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out)), fan_out = rows.
Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

inline std::size_t svdf_nodes(const SvdfLayerParams& p) { return p.feature_filters.rows(); }
inline std::size_t svdf_input_dim(const SvdfLayerParams& p) { return p.feature_filters.cols(); }
inline std::size_t svdf_memory(const SvdfLayerParams& p) { return p.time_filters.cols(); }

/// N·D + N·T + N
std::size_t param_count(const SvdfLayerParams& p);
/// out·in + out
std::size_t param_count(const DenseParams& p);
/// 2·L·(E+1)
std::size_t param_count(const FilmParams& p);

void validate(const SvdfLayerParams& p);
void validate(const DenseParams& p);
void validate(const FilmParams& p);

// ---- tape ops --------------------------------------------------------------

SvdfWeights<ad::Var> bind(ad::Tape& tape, const SvdfLayerParams& p);
DenseWeights<ad::Var> bind(ad::Tape& tape, const DenseParams& p);
FilmWeights<ad::Var> bind(ad::Tape& tape, const FilmParams& p);

/// x[F×D] -> [F×N]
ad::Var svdf_forward(const SvdfWeights<ad::Var>& w, ad::Var x);
/// x[F×in] -> [F×out]
ad::Var dense_forward(const DenseWeights<ad::Var>& w, ad::Var x);
/// e[1×E] -> (gamma[1×L], beta[1×L])
std::pair<ad::Var, ad::Var> film_project(const FilmWeights<ad::Var>& w, ad::Var e);
/// gamma ⊙ l + beta, broadcast over frames.
ad::Var film_apply(ad::Var l, ad::Var gamma, ad::Var beta);

// ---- plain tensor API ---------------------------------------------------------

Tensor svdf_forward_batch(const SvdfLayerParams& p, const Tensor& x);
Tensor dense_forward(const DenseParams& p, const Tensor& x);
/// e is a vector [E] (or [1×E]); returns vectors of length L.
std::pair<Tensor, Tensor> film_project(const FilmParams& p, const Tensor& e);
Tensor film_apply(const Tensor& l, const Tensor& gamma, const Tensor& beta);

/// Streaming memory of one SVDF layer: a T×N ring of past feature-filter
/// activations. Slots not yet written read as zero, which matches the zero
/// left-padding of the batch path.
class SvdfState {
 public:
  SvdfState(std::size_t nodes, std::size_t memory);

  void reset();
  void push(std::span<const double> activation);
  /// Activation of frame (current - memory + 1 + slot); slot memory-1 is the
  /// newest.
  double history(std::size_t slot, std::size_t node) const;

  std::size_t nodes() const { return nodes_; }
  std::size_t memory() const { return memory_; }
  std::size_t cursor() const { return cursor_; }
  std::size_t frames_seen() const { return frames_seen_; }

 private:
  std::size_t nodes_;
  std::size_t memory_;
  Tensor buffer_;
  std::size_t cursor_ = 0;  // next slot to overwrite == oldest entry
  std::size_t frames_seen_ = 0;
};

/// One frame [D] through the layer; advances `state`.
Tensor svdf_forward_stream(const SvdfLayerParams& p, SvdfState& state, const Tensor& frame);

}  // namespace kws
