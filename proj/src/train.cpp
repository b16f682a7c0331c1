// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kws/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <set>

#include "kws/checkpoint.hpp"
#include "kws/errors.hpp"

namespace kws {

KwsModelConfig TrainConfig::desk_model() {
  KwsModelConfig c;
  c.input_dim = 40;
  c.encoder.assign(2, EncoderStageConfig{64, 6, 32});
  c.decoder.assign(2, DecoderStageConfig{32, 16});
  return c;
}

KwsModelConfig TrainConfig::resolved_model() const {
  KwsModelConfig c = model;
  c.film_embedding_dim = variant_embedding_dim(variant);
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train: " + m); };
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon must be > 0");
  if (!(robust_prob >= 0.0 && robust_prob <= 1.0)) fail("robust_prob must lie in [0, 1]");
  if (variant == Variant::baseline && robust_prob > 0.0) fail("robust_prob needs a conditioned variant");
  if (eval_every == 0) fail("eval_every must be >= 1");
  if (smooth_window == 0) fail("smooth_window must be >= 1");
  resolved_model().validate();
}

namespace {
using json = nlohmann::json;

template <class T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace

json train_config_to_json(const TrainConfig& c) {
  json model = model_config_to_json(c.model);
  model.erase("conditioning");
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"variant", to_string(c.variant)},
          {"robust_prob", c.robust_prob},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"smooth_window", c.smooth_window},
          {"augment", c.augment},
          {"model", model}};
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  static const std::vector<std::string> keys{"steps", "batch_size", "learning_rate", "beta1",
                                             "beta2", "epsilon", "variant", "robust_prob",
                                             "seed", "eval_every", "smooth_window", "augment",
                                             "model"};
  for (const auto& [k, _] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError("train: unknown key '" + k + "'");
  TrainConfig c = base;
  try {
    take(j, "steps", c.steps);
    take(j, "batch_size", c.batch_size);
    take(j, "learning_rate", c.learning_rate);
    take(j, "beta1", c.beta1);
    take(j, "beta2", c.beta2);
    take(j, "epsilon", c.epsilon);
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    take(j, "robust_prob", c.robust_prob);
    take(j, "seed", c.seed);
    take(j, "eval_every", c.eval_every);
    take(j, "smooth_window", c.smooth_window);
    take(j, "augment", c.augment);
    if (j.contains("model")) {
      if (j.at("model").contains("conditioning"))
        throw ConfigError("train.model: conditioning follows from the variant and cannot be set");
      json merged = model_config_to_json(c.model);
      merged.merge_patch(j.at("model"));
      c.model = model_config_from_json(merged);
      c.model.film_embedding_dim.reset();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------- loss

std::vector<Tensor> flatten_params(const ModelWeights<Tensor>& w) {
  std::vector<Tensor> out;
  for_each_param(w, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

ModelWeights<ad::Var> weights_from_vars(const ModelWeights<Tensor>& like, std::span<const ad::Var> vars) {
  auto w = map_weights<ad::Var>(like, [](const Tensor&) { return ad::Var{}; });
  std::size_t i = 0;
  for_each_param(w, [&](const std::string& name, ad::Var& v) {
    if (i >= vars.size()) throw DimensionError("weights_from_vars: too few variables at " + name);
    v = vars[i++];
  });
  if (i != vars.size()) throw DimensionError("weights_from_vars: too many variables");
  return w;
}

namespace {

std::optional<ad::Var> embedding_leaf(ad::Tape& tape, const KwsModel& m, const TrainExample& ex) {
  if (!m.config.conditioned()) return std::nullopt;
  if (!ex.embedding)
    throw UsageError("conditioned model: example " + ex.utterance_id + " has no embedding");
  return tape.leaf(ex.embedding->values.reshape({1, ex.embedding->values.size()}));
}

ad::Var example_loss(ad::Tape& tape, const ModelWeights<ad::Var>& w, const KwsModel& m,
                     const TrainExample& ex) {
  return ad::softmax_cross_entropy(forward(w, tape.leaf(ex.features), embedding_leaf(tape, m, ex)),
                                   ex.labels);
}

void require_batch(const Batch& batch) {
  if (batch.empty()) throw ValidationError("loss: empty batch");
}

}  // namespace

double loss(const KwsModel& m, const Batch& batch) {
  require_batch(batch);
  double total = 0.0;
  for (const auto& ex : batch) {
    ad::Tape tape;
    total += example_loss(tape, bind(tape, m.weights), m, ex).value()[0];
  }
  return total / static_cast<double>(batch.size());
}

LossAndGrad loss_and_grad(const KwsModel& m, const Batch& batch) {
  require_batch(batch);
  const std::size_t n = batch.size();
  std::vector<std::vector<Tensor>> per(n);
  std::vector<double> losses(n);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      ad::Tape tape;
      const auto w = bind(tape, m.weights);
      const ad::Var l = example_loss(tape, w, m, batch[i]);
      tape.backward(l);
      losses[i] = l.value()[0];
      for_each_param(w, [&](const std::string&, const ad::Var& v) { per[i].push_back(v.grad()); });
    } catch (...) {
#pragma omp critical
      error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  LossAndGrad out;
  out.grads = std::move(per[0]);
  out.loss = losses[0];
  for (std::size_t i = 1; i < n; ++i) {
    out.loss += losses[i];
    for (std::size_t p = 0; p < out.grads.size(); ++p) {
      auto dst = out.grads[p].values();
      auto src = per[i][p].values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.loss *= inv;
  for (auto& g : out.grads)
    for (double& v : g.values()) v *= inv;
  return out;
}

LossAndGrad reference::loss_and_grad(const KwsModel& m, const Batch& batch) {
  require_batch(batch);
  ad::Tape tape;
  const auto w = bind(tape, m.weights);
  std::optional<ad::Var> total;
  for (const auto& ex : batch) {
    const ad::Var l = example_loss(tape, w, m, ex);
    total = total ? ad::add(*total, l) : l;
  }
  const ad::Var mean = ad::scale(*total, 1.0 / static_cast<double>(batch.size()));
  tape.backward(mean);
  LossAndGrad out;
  out.loss = mean.value()[0];
  for_each_param(w, [&](const std::string&, const ad::Var& v) { out.grads.push_back(v.grad()); });
  return out;
}

void robust_mix(Batch& batch, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("robust_mix: p must lie in [0, 1]");
  for (auto& ex : batch) {
    // one draw per example whatever p is, so the stream stays aligned
    const bool replace = rng.uniform() < p;
    if (replace && ex.embedding) {
      ex.embedding = constant_vector(ex.embedding->dim());
      ex.replaced = true;
    }
  }
}

// ---------------------------------------------------------------- Adam

Adam::Adam(const KwsModel& m, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for_each_param(m.weights, [&](const std::string&, const Tensor& t) {
    m_.push_back(Tensor::zeros_like(t));
    v_.push_back(Tensor::zeros_like(t));
  });
}

void Adam::step(KwsModel& model, const std::vector<Tensor>& grads) {
  if (grads.size() != m_.size()) throw DimensionError("Adam: gradient count does not match the model");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t p = 0;
  for_each_param(model.weights, [&](const std::string& name, Tensor& w) {
    const auto g = grads[p].values();
    if (g.size() != w.size()) throw DimensionError("Adam: gradient shape mismatch for " + name);
    auto m = m_[p].values();
    auto v = v_[p].values();
    auto x = w.values();
    for (std::size_t k = 0; k < x.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      x[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
    ++p;
  });
}

// ---------------------------------------------------------------- files

namespace {

constexpr const char* kMetricsHeader = "step,train_loss,dev_eer,wall_ms\n";

std::string metrics_line(const MetricRow& r) {
  char buf[160];
  if (r.dev_eer)
    std::snprintf(buf, sizeof buf, "%llu,%.10g,%.10g,%.1f\n", static_cast<unsigned long long>(r.step),
                  r.train_loss, *r.dev_eer, r.wall_ms);
  else
    std::snprintf(buf, sizeof buf, "%llu,%.10g,,%.1f\n", static_cast<unsigned long long>(r.step),
                  r.train_loss, r.wall_ms);
  return buf;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << kMetricsHeader;
  for (const auto& r : rows) out << metrics_line(r);
}

void save_train_state(const TrainState& s, const TrainConfig& cfg, const std::filesystem::path& path) {
  TensorFile f;
  f.header = {{"kind", "kws-train-state"},
              {"step", s.step},
              {"adam_t", s.optimizer.t()},
              {"best_dev_eer", s.best_dev_eer ? json(*s.best_dev_eer) : json()},
              {"best_step", s.best_step},
              {"train_config", train_config_to_json(cfg)},
              {"model_config", model_config_to_json(s.model.config)}};
  const Adam& adam = s.optimizer;
  std::size_t p = 0;
  for_each_param(s.model.weights, [&](const std::string& name, const Tensor& t) {
    f.tensors.emplace_back("model/" + name, t);
    f.tensors.emplace_back("adam.m/" + name, adam.first_moment()[p]);
    f.tensors.emplace_back("adam.v/" + name, adam.second_moment()[p]);
    ++p;
  });
  write_tensor_file(path, f);
}

TrainState load_train_state(const std::filesystem::path& path, const TrainConfig& cfg) {
  const TensorFile f = read_tensor_file(path);
  if (f.header.value("kind", "") != "kws-train-state")
    throw CorruptFileError(path.string() + " is not a training state file");
  if (f.header.at("train_config") != train_config_to_json(cfg))
    throw ConfigError("cannot resume: " + path.string() + " was written with a different training config");
  TrainState s;
  s.model = build_model(model_config_from_json(f.header.at("model_config")), 0);
  s.optimizer = Adam(s.model, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  std::size_t p = 0;
  for_each_param(s.model.weights, [&](const std::string& name, Tensor& t) {
    t = f.get("model/" + name);
    s.optimizer.first_moment()[p] = f.get("adam.m/" + name);
    s.optimizer.second_moment()[p] = f.get("adam.v/" + name);
    ++p;
  });
  s.step = f.header.at("step").get<std::uint64_t>();
  s.optimizer.set_t(f.header.at("adam_t").get<std::uint64_t>());
  if (!f.header.at("best_dev_eer").is_null()) s.best_dev_eer = f.header.at("best_dev_eer").get<double>();
  s.best_step = f.header.at("best_step").get<std::uint64_t>();
  return s;
}

// ---------------------------------------------------------------- loop

namespace {

Tensor augmented_copy(const CorpusConfig& cc, const Utterance& u, std::size_t copy) {
  const std::string key = u.id + "#" + std::to_string(copy);
  const double snr = Rng(sub_seed(cc.seed, "augment-snr", key)).uniform(cc.snr_min_db, cc.snr_max_db);
  return augment_noise(u.features, snr, sub_seed(cc.seed, "augment-noise", key));
}

}  // namespace

const Tensor& AugmentCache::get(const CorpusConfig& cc, const Utterance& u, std::size_t copy) {
  const std::string key = u.id + "#" + std::to_string(copy);
  auto it = copies_.find(key);
  if (it == copies_.end()) it = copies_.emplace(key, augmented_copy(cc, u, copy)).first;
  return it->second;
}

Batch make_batch(const TrainConfig& cfg, const Corpus& corpus, std::uint64_t step,
                 const std::vector<const Utterance*>& train_set, AugmentCache* cache) {
  if (train_set.empty()) throw DataError("train split is empty");
  Rng rng(sub_seed(cfg.seed, "batch", step));
  const EmbeddingSimulator sim = corpus.simulator();
  const auto& cc = corpus.config;
  Batch batch;
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    const Utterance& u = *train_set[rng.index(train_set.size())];
    TrainExample ex{u.id, u.features, u.labels, std::nullopt, false};
    // copy 0 is the clean utterance, copies 1..n are fixed noisy versions
    const std::size_t copy = cfg.augment ? rng.index(cc.augment_copies + 1) : 0;
    if (copy > 0) ex.features = cache ? cache->get(cc, u, copy) : augmented_copy(cc, u, copy);
    ex.embedding = pair_enrollment({u.id, &corpus.speaker(u.speaker_id)}, corpus.enrollments, sim,
                                   cfg.variant, rng);
    batch.push_back(std::move(ex));
  }
  if (cfg.variant != Variant::baseline) robust_mix(batch, cfg.robust_prob, rng);
  return batch;
}

double dev_eer(const KwsModel& m, const Corpus& corpus, const TrainConfig& cfg) {
  ScoringOptions opt;
  opt.variant = cfg.variant;
  opt.smooth_window = cfg.smooth_window;
  opt.pair_seed = sub_seed(cfg.seed, "dev-pairing");
  std::vector<double> pos, neg;
  for (const auto& s : score_split(m, corpus, Split::dev, opt).scored) (s.positive ? pos : neg).push_back(s.score);
  return compute_eer(pos, neg).eer;
}

namespace {

void check_enrollments(const TrainConfig& cfg, const Corpus& corpus,
                       const std::vector<const Utterance*>& train_set) {
  const auto kind = variant_kind(cfg.variant);
  if (!kind || cfg.variant == Variant::ti_self) return;
  std::set<std::string> missing;
  for (const auto* u : train_set)
    if (corpus.enrollments.lookup(u->speaker_id, *kind).empty()) missing.insert(u->speaker_id);
  if (missing.empty()) return;
  std::string list;
  for (const auto& s : missing) list += (list.empty() ? "" : ", ") + s;
  throw NoEnrollmentError(list);
}

CheckpointInfo info_for(const TrainConfig& cfg, const Corpus& corpus, std::uint64_t step, const char* which) {
  CheckpointInfo info;
  info.step = step;
  info.seed = cfg.seed;
  info.extra = {{"variant", to_string(cfg.variant)},
                {"robust_prob", cfg.robust_prob},
                {"corpus_id", corpus.corpus_id()},
                {"checkpoint", which}};
  return info;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Corpus& corpus, const TrainOptions& opt) {
  cfg.validate();
  const KwsModelConfig mc = cfg.resolved_model();
  if (mc.input_dim != corpus.config.feature_dim)
    throw ConfigError("train: model input_dim " + std::to_string(mc.input_dim) +
                      " does not match corpus feature_dim " + std::to_string(corpus.config.feature_dim));
  const auto train_set = corpus.split(Split::train);
  AugmentCache augment_cache;
  if (train_set.empty()) throw DataError("train split is empty");
  check_enrollments(cfg, corpus, train_set);

  const bool writing = !opt.out_dir.empty();
  if (writing) std::filesystem::create_directories(opt.out_dir);
  const auto state_path = opt.out_dir / "state.kwt";

  TrainResult result;
  TrainState st;
  if (writing && opt.resume && std::filesystem::exists(state_path)) {
    st = load_train_state(state_path, cfg);
    if (st.best_dev_eer && std::filesystem::exists(opt.out_dir / "best.kwt"))
      result.best_model = load_model(opt.out_dir / "best.kwt");
  } else {
    st.model = build_model(mc, cfg.seed);
    st.optimizer = Adam(st.model, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  }

  std::ofstream metrics;
  if (writing) {
    const bool append = opt.resume && st.step > 0;
    metrics.open(opt.out_dir / "metrics.csv", append ? std::ios::app : std::ios::trunc);
    if (!append) metrics << kMetricsHeader;
  }
  const auto t0 = std::chrono::steady_clock::now();
  while (st.step < cfg.steps) {
    if (opt.stop_after && st.step >= *opt.stop_after) break;
    const Batch batch = make_batch(cfg, corpus, st.step, train_set, &augment_cache);
    const LossAndGrad lg = loss_and_grad(st.model, batch);
    if (!std::isfinite(lg.loss))
      throw NumericError("training loss became non-finite at step " + std::to_string(st.step));
    st.optimizer.step(st.model, lg.grads);
    ++st.step;

    MetricRow row{st.step, lg.loss, std::nullopt, 0.0};
    if (st.step % cfg.eval_every == 0 || st.step == cfg.steps) {
      row.dev_eer = dev_eer(st.model, corpus, cfg);
      if (!st.best_dev_eer || *row.dev_eer < *st.best_dev_eer) {
        st.best_dev_eer = row.dev_eer;
        st.best_step = st.step;
        result.best_model = st.model;
        if (writing) save_model(st.model, opt.out_dir / "best.kwt", info_for(cfg, corpus, st.step, "best"));
      }
    }
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (writing) metrics << metrics_line(row) << std::flush;
    if (opt.on_metrics) opt.on_metrics(row);
    result.metrics.push_back(row);
  }
  if (writing) {
    metrics.close();
    save_train_state(st, cfg, state_path);
    if (st.step == cfg.steps)
      save_model(st.model, opt.out_dir / "final.kwt", info_for(cfg, corpus, st.step, "final"));
  }
  result.steps_done = st.step;
  result.final_model = std::move(st.model);
  return result;
}

}  // namespace kws
