// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kws/model.hpp"

#include "kws/errors.hpp"

namespace kws {

std::size_t KwsModelConfig::logits_dim() const {
  return encoder.empty() ? input_dim : encoder.back().bottleneck;
}

void KwsModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("model: input_dim must be >= 1");
  if (encoder.empty()) throw ConfigError("model: encoder needs at least one stage");
  if (decoder.empty()) throw ConfigError("model: decoder needs at least one stage");
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  for (const auto& s : encoder)
    if (s.nodes == 0 || s.memory == 0 || s.bottleneck == 0)
      throw ConfigError("model: encoder stage sizes must be >= 1");
  for (const auto& s : decoder)
    if (s.nodes == 0 || s.memory == 0) throw ConfigError("model: decoder stage sizes must be >= 1");
  if (film_embedding_dim && *film_embedding_dim == 0)
    throw ConfigError("model: FiLM embedding dimension must be >= 1");
}

KwsModelConfig KwsModelConfig::full_size(std::optional<std::size_t> embedding_dim) {
  KwsModelConfig c;
  c.input_dim = 80;
  c.encoder.assign(4, EncoderStageConfig{576, 6, 64});
  c.decoder.assign(3, DecoderStageConfig{32, 32});
  c.num_classes = 2;
  c.film_embedding_dim = embedding_dim;
  return c;
}

KwsModel build_model(const KwsModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(sub_seed(seed, "model-init"));
  KwsModel m{config, {}};
  std::size_t dim = config.input_dim;
  for (const auto& s : config.encoder) {
    auto svdf = make_svdf(s.nodes, dim, s.memory, rng);
    auto bottleneck = make_dense(s.bottleneck, s.nodes, Activation::none, rng);
    m.weights.encoder.push_back({std::move(svdf), std::move(bottleneck)});
    dim = s.bottleneck;
  }
  // FiLM draws nothing from the rng, so conditioned and baseline builds with
  // the same seed share every other weight.
  if (config.film_embedding_dim) m.weights.film = make_film(dim, *config.film_embedding_dim);
  for (const auto& s : config.decoder) {
    m.weights.decoder.push_back(make_svdf(s.nodes, dim, s.memory, rng));
    dim = s.nodes;
  }
  m.weights.head = make_dense(config.num_classes, dim, Activation::none, rng);
  return m;
}

ParamBreakdown count_params(const KwsModel& m) {
  ParamBreakdown b;
  for (const auto& s : m.weights.encoder) b.encoder += param_count(s.svdf) + param_count(s.bottleneck);
  if (m.weights.film) b.film = param_count(*m.weights.film);
  for (const auto& s : m.weights.decoder) b.decoder += param_count(s);
  b.head = param_count(m.weights.head);
  return b;
}

ParamBreakdown closed_form_params(const KwsModelConfig& c) {
  ParamBreakdown b;
  std::size_t dim = c.input_dim;
  for (const auto& s : c.encoder) {
    b.encoder += s.nodes * (dim + s.memory + 1) + s.bottleneck * (s.nodes + 1);
    dim = s.bottleneck;
  }
  if (c.film_embedding_dim) b.film = 2 * dim * (*c.film_embedding_dim + 1);
  for (const auto& s : c.decoder) {
    b.decoder += s.nodes * (dim + s.memory + 1);
    dim = s.nodes;
  }
  b.head = c.num_classes * (dim + 1);
  return b;
}

ModelWeights<ad::Var> bind(ad::Tape& tape, const ModelWeights<Tensor>& w) {
  return map_weights<ad::Var>(w, [&tape](const Tensor& t) { return tape.leaf(t); });
}

ad::Var forward(const ModelWeights<ad::Var>& w, ad::Var x, std::optional<ad::Var> embedding) {
  ad::Var h = x;
  for (const auto& stage : w.encoder) h = dense_forward(stage.bottleneck, svdf_forward(stage.svdf, h));
  if (w.film) {
    if (!embedding)
      throw UsageError(
          "conditioned model needs a speaker embedding; pass the constant vector when no "
          "enrollment exists");
    auto [gamma, beta] = film_project(*w.film, *embedding);
    h = film_apply(h, gamma, beta);
  }
  for (const auto& stage : w.decoder) h = svdf_forward(stage, h);
  return dense_forward(w.head, h);
}

namespace {

void check_input(const KwsModel& m, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != m.config.input_dim)
    throw DimensionError("model input " + shape_str(x.shape()) + " does not match input_dim " +
                         std::to_string(m.config.input_dim));
}

Tensor as_row(const Tensor& e) { return e.reshape({1, e.size()}); }

}  // namespace

Tensor forward_logits(const KwsModel& m, const Tensor& x, const std::optional<Tensor>& embedding) {
  check_input(m, x);
  ad::Tape tape;
  const auto w = bind(tape, m.weights);
  std::optional<ad::Var> e;
  if (m.config.conditioned() && embedding) e = tape.leaf(as_row(*embedding));
  return forward(w, tape.leaf(x), e).value();
}

Tensor forward_posteriors(const KwsModel& m, const Tensor& x,
                          const std::optional<Tensor>& embedding) {
  return ad::softmax_rows(forward_logits(m, x, embedding));
}

// ---- streaming ---------------------------------------------------------------

namespace {

Tensor dense_vector(const DenseParams& p, const Tensor& x) {
  const std::size_t out = p.weights.rows(), in = p.weights.cols();
  Tensor y({out});
  for (std::size_t o = 0; o < out; ++o) {
    double s = 0.0;
    for (std::size_t i = 0; i < in; ++i) s += x[i] * p.weights.at(o, i);
    s += p.bias[o];
    y[o] = p.activation == Activation::relu && s < 0.0 ? 0.0 : s;
  }
  return y;
}

}  // namespace

StreamSession::StreamSession(const KwsModel& model, const std::optional<Tensor>& embedding)
    : model_(&model) {
  for (const auto& s : model.weights.encoder)
    encoder_states_.emplace_back(svdf_nodes(s.svdf), svdf_memory(s.svdf));
  for (const auto& s : model.weights.decoder)
    decoder_states_.emplace_back(svdf_nodes(s), svdf_memory(s));
  if (model.weights.film) {
    if (!embedding)
      throw UsageError(
          "conditioned model needs a speaker embedding; pass the constant vector when no "
          "enrollment exists");
    auto [g, b] = film_project(*model.weights.film, *embedding);
    gamma_ = std::move(g);
    beta_ = std::move(b);
  }
}

void StreamSession::reset() {
  for (auto& s : encoder_states_) s.reset();
  for (auto& s : decoder_states_) s.reset();
  frames_ = 0;
}

Tensor StreamSession::step(const Tensor& frame) {
  const auto& w = model_->weights;
  if (frame.size() != model_->config.input_dim)
    throw DimensionError("stream: frame of size " + std::to_string(frame.size()) +
                         ", model expects " + std::to_string(model_->config.input_dim));
  Tensor h = frame.reshape({frame.size()});
  for (std::size_t i = 0; i < w.encoder.size(); ++i)
    h = dense_vector(w.encoder[i].bottleneck, svdf_forward_stream(w.encoder[i].svdf, encoder_states_[i], h));
  if (gamma_)
    for (std::size_t k = 0; k < h.size(); ++k) h[k] = h[k] * (*gamma_)[k] + (*beta_)[k];
  for (std::size_t i = 0; i < w.decoder.size(); ++i)
    h = svdf_forward_stream(w.decoder[i], decoder_states_[i], h);
  Tensor logits = dense_vector(w.head, h);
  ++frames_;
  return ad::softmax_rows(logits.reshape({1, logits.size()})).reshape({logits.size()});
}

Tensor stream_step(const KwsModel& m, StreamSession& session, const Tensor& frame) {
  if (session.model() != &m) throw UsageError("stream session was opened on a different model");
  return session.step(frame);
}

}  // namespace kws
