// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kws/layers.hpp"

#include <cmath>

#include "kws/errors.hpp"

namespace kws {

Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double r = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t({rows, cols});
  for (auto& v : t.values()) v = rng.uniform(-r, r);
  return t;
}

SvdfLayerParams make_svdf(std::size_t nodes, std::size_t input_dim, std::size_t memory, Rng& rng) {
  if (nodes == 0 || input_dim == 0 || memory == 0)
    throw ConfigError("svdf: nodes, input_dim and memory must be >= 1");
  SvdfLayerParams p;
  p.feature_filters = glorot_uniform(nodes, input_dim, rng);
  p.time_filters = glorot_uniform(nodes, memory, rng);
  p.bias = Tensor({nodes});
  return p;
}

DenseParams make_dense(std::size_t out, std::size_t in, Activation act, Rng& rng) {
  if (out == 0 || in == 0) throw ConfigError("dense: sizes must be >= 1");
  return DenseParams{glorot_uniform(out, in, rng), Tensor({out}), act};
}

FilmParams make_film(std::size_t logits_dim, std::size_t embedding_dim) {
  if (logits_dim == 0 || embedding_dim == 0) throw ConfigError("film: sizes must be >= 1");
  return FilmParams{Tensor({logits_dim, embedding_dim}), Tensor({logits_dim}, 1.0),
                    Tensor({logits_dim, embedding_dim}), Tensor({logits_dim})};
}

std::size_t param_count(const SvdfLayerParams& p) {
  return p.feature_filters.size() + p.time_filters.size() + p.bias.size();
}

std::size_t param_count(const DenseParams& p) { return p.weights.size() + p.bias.size(); }

std::size_t param_count(const FilmParams& p) {
  return p.w_gamma.size() + p.b_gamma.size() + p.w_beta.size() + p.b_beta.size();
}

void validate(const SvdfLayerParams& p) {
  const auto& ff = p.feature_filters;
  const auto& tf = p.time_filters;
  if (ff.rank() != 2 || tf.rank() != 2 || p.bias.rank() != 1 || tf.rows() != ff.rows() ||
      p.bias.size() != ff.rows())
    throw DimensionError("svdf: inconsistent shapes " + shape_str(ff.shape()) + ", " +
                         shape_str(tf.shape()) + ", " + shape_str(p.bias.shape()));
}

void validate(const DenseParams& p) {
  if (p.weights.rank() != 2 || p.bias.rank() != 1 || p.bias.size() != p.weights.rows())
    throw DimensionError("dense: inconsistent shapes " + shape_str(p.weights.shape()) + ", " +
                         shape_str(p.bias.shape()));
}

void validate(const FilmParams& p) {
  if (p.w_gamma.rank() != 2 || p.w_gamma.shape() != p.w_beta.shape() ||
      p.b_gamma.size() != p.w_gamma.rows() || p.b_beta.size() != p.w_beta.rows())
    throw DimensionError("film: inconsistent shapes " + shape_str(p.w_gamma.shape()) + ", " +
                         shape_str(p.w_beta.shape()));
}

// ---- tape ops -----------------------------------------------------------------

SvdfWeights<ad::Var> bind(ad::Tape& tape, const SvdfLayerParams& p) {
  return {tape.leaf(p.feature_filters), tape.leaf(p.time_filters), tape.leaf(p.bias)};
}

DenseWeights<ad::Var> bind(ad::Tape& tape, const DenseParams& p) {
  return {tape.leaf(p.weights), tape.leaf(p.bias), p.activation};
}

FilmWeights<ad::Var> bind(ad::Tape& tape, const FilmParams& p) {
  return {tape.leaf(p.w_gamma), tape.leaf(p.b_gamma), tape.leaf(p.w_beta), tape.leaf(p.b_beta)};
}

ad::Var svdf_forward(const SvdfWeights<ad::Var>& w, ad::Var x) {
  if (x.value().rank() != 2 || x.value().cols() != w.feature_filters.value().cols())
    throw DimensionError("svdf: input " + shape_str(x.value().shape()) +
                         " does not match feature filters " +
                         shape_str(w.feature_filters.value().shape()));
  ad::Var act = ad::matmul_bt(x, w.feature_filters);
  ad::Var filtered = ad::time_filter(act, w.time_filters);
  return ad::relu(ad::add(filtered, w.bias));
}

ad::Var dense_forward(const DenseWeights<ad::Var>& w, ad::Var x) {
  ad::Var y = ad::add(ad::matmul_bt(x, w.weights), w.bias);
  return w.activation == Activation::relu ? ad::relu(y) : y;
}

std::pair<ad::Var, ad::Var> film_project(const FilmWeights<ad::Var>& w, ad::Var e) {
  const auto& ev = e.value();
  if (ev.rank() != 2 || ev.rows() != 1 || ev.cols() != w.w_gamma.value().cols())
    throw DimensionError("film: embedding " + shape_str(ev.shape()) +
                         " does not match projection " + shape_str(w.w_gamma.value().shape()));
  ad::Var gamma = ad::add(ad::matmul_bt(e, w.w_gamma), w.b_gamma);
  ad::Var beta = ad::add(ad::matmul_bt(e, w.w_beta), w.b_beta);
  return {gamma, beta};
}

ad::Var film_apply(ad::Var l, ad::Var gamma, ad::Var beta) {
  const std::size_t dim = l.value().cols();
  if (gamma.value().size() != dim || beta.value().size() != dim)
    throw DimensionError("film_apply: logits " + shape_str(l.value().shape()) + " vs gamma " +
                         shape_str(gamma.value().shape()) + ", beta " +
                         shape_str(beta.value().shape()));
  return ad::add(ad::mul(l, gamma), beta);
}

// ---- plain tensor API -------------------------------------------------------------

Tensor svdf_forward_batch(const SvdfLayerParams& p, const Tensor& x) {
  validate(p);
  ad::Tape tape;
  return svdf_forward(bind(tape, p), tape.leaf(x)).value();
}

Tensor dense_forward(const DenseParams& p, const Tensor& x) {
  validate(p);
  ad::Tape tape;
  return dense_forward(bind(tape, p), tape.leaf(x)).value();
}

std::pair<Tensor, Tensor> film_project(const FilmParams& p, const Tensor& e) {
  validate(p);
  ad::Tape tape;
  auto [g, b] = film_project(bind(tape, p), tape.leaf(e.reshape({1, e.size()})));
  const std::size_t dim = p.b_gamma.size();
  return {g.value().reshape({dim}), b.value().reshape({dim})};
}

Tensor film_apply(const Tensor& l, const Tensor& gamma, const Tensor& beta) {
  ad::Tape tape;
  return film_apply(tape.leaf(l), tape.leaf(gamma), tape.leaf(beta)).value();
}

// ---- streaming ------------------------------------------------------------------

SvdfState::SvdfState(std::size_t nodes, std::size_t memory)
    : nodes_(nodes), memory_(memory), buffer_({memory, nodes}) {}

void SvdfState::reset() {
  for (auto& v : buffer_.values()) v = 0.0;
  cursor_ = 0;
  frames_seen_ = 0;
}

void SvdfState::push(std::span<const double> activation) {
  if (activation.size() != nodes_)
    throw DimensionError("svdf state: pushed " + std::to_string(activation.size()) +
                         " activations into a " + std::to_string(nodes_) + "-node buffer");
  auto slot = buffer_.row(cursor_);
  std::copy(activation.begin(), activation.end(), slot.begin());
  cursor_ = (cursor_ + 1) % memory_;
  ++frames_seen_;
}

double SvdfState::history(std::size_t slot, std::size_t node) const {
  return buffer_.at((cursor_ + slot) % memory_, node);
}

Tensor svdf_forward_stream(const SvdfLayerParams& p, SvdfState& state, const Tensor& frame) {
  const std::size_t nodes = svdf_nodes(p), dim = svdf_input_dim(p), memory = svdf_memory(p);
  if (state.nodes() != nodes || state.memory() != memory)
    throw DimensionError("svdf stream: state [" + std::to_string(state.memory()) + "x" +
                         std::to_string(state.nodes()) + "] does not fit layer [" +
                         std::to_string(memory) + "x" + std::to_string(nodes) + "]");
  if (frame.size() != dim)
    throw DimensionError("svdf stream: frame of size " + std::to_string(frame.size()) +
                         ", layer expects " + std::to_string(dim));
  std::vector<double> act(nodes);
  for (std::size_t n = 0; n < nodes; ++n) {
    double s = 0.0;
    const double* w = p.feature_filters.data() + n * dim;
    for (std::size_t d = 0; d < dim; ++d) s += frame[d] * w[d];
    act[n] = s;
  }
  state.push(act);
  Tensor out({nodes});
  for (std::size_t n = 0; n < nodes; ++n) {
    double s = 0.0;
    for (std::size_t t = 0; t < memory; ++t) s += p.time_filters.at(n, t) * state.history(t, n);
    s += p.bias[n];
    out[n] = s > 0.0 ? s : 0.0;
  }
  return out;
}

}  // namespace kws
