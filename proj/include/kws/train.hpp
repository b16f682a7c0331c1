// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kws/data.hpp"
#include "kws/eval.hpp"
#include "kws/model.hpp"
#include "kws/speaker.hpp"

namespace kws {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Variant variant = Variant::baseline;
  double robust_prob = 0.0;
  std::uint64_t seed = 1;
  std::size_t eval_every = 500;
  std::size_t smooth_window = 10;
  bool augment = true;
  /// Architecture; conditioning is set from the variant.
  KwsModelConfig model = desk_model();

  /// Two encoder stages (64 nodes, memory 6, bottleneck 32) and two decoder
  /// stages (32 nodes, memory 16) on 40-dim input.
  static KwsModelConfig desk_model();
  /// model with FiLM sized for the variant's embedding.
  KwsModelConfig resolved_model() const;
  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
/// Missing keys keep the values of `base`; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});

struct TrainExample {
  std::string utterance_id;
  Tensor features;
  std::vector<int> labels;
  /// Required iff the model is conditioned.
  std::optional<SpeakerEmbedding> embedding;
  bool replaced = false;
};
using Batch = std::vector<TrainExample>;

/// Mean over utterances of the per-utterance mean frame cross-entropy.
double loss(const KwsModel& m, const Batch& batch);

struct LossAndGrad {
  double loss = 0.0;
  /// One tensor per parameter in for_each_param order.
  std::vector<Tensor> grads;
};

/// Per-utterance tapes run in parallel; gradients are reduced in batch order,
/// so the result does not depend on the thread count.
LossAndGrad loss_and_grad(const KwsModel& m, const Batch& batch);
namespace reference {
/// The whole batch on one tape with a single backward pass.
LossAndGrad loss_and_grad(const KwsModel& m, const Batch& batch);
}

/// Tape weights whose leaves are `vars`, taken in for_each_param order.
ModelWeights<ad::Var> weights_from_vars(const ModelWeights<Tensor>& like, std::span<const ad::Var> vars);
std::vector<Tensor> flatten_params(const ModelWeights<Tensor>& w);

/// Replaces each embedding by the constant vector with probability p and
/// marks it replaced.
void robust_mix(Batch& batch, double p, Rng& rng);

class Adam {
 public:
  Adam() = default;
  Adam(const KwsModel& m, double lr, double beta1, double beta2, double eps);

  void step(KwsModel& m, const std::vector<Tensor>& grads);

  std::uint64_t t() const { return t_; }
  std::vector<Tensor>& first_moment() { return m_; }
  std::vector<Tensor>& second_moment() { return v_; }
  const std::vector<Tensor>& first_moment() const { return m_; }
  const std::vector<Tensor>& second_moment() const { return v_; }
  void set_t(std::uint64_t t) { t_ = t; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct MetricRow {
  std::uint64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> dev_eer;
  double wall_ms = 0.0;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  KwsModel model;
  Adam optimizer;
  std::uint64_t step = 0;
  std::optional<double> best_dev_eer;
  std::uint64_t best_step = 0;
};

void save_train_state(const TrainState& s, const TrainConfig& cfg, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path, const TrainConfig& cfg);

/// Noisy copies of training utterances, computed once on first use. Each
/// copy depends only on (corpus seed, utterance id, copy index).
class AugmentCache {
 public:
  const Tensor& get(const CorpusConfig& cc, const Utterance& u, std::size_t copy);

 private:
  std::map<std::string, Tensor> copies_;
};

/// The batch used at a given step. A pure function of (config, corpus, step),
/// which is what makes resumed runs identical to uninterrupted ones.
Batch make_batch(const TrainConfig& cfg, const Corpus& corpus, std::uint64_t step,
                 const std::vector<const Utterance*>& train_set, AugmentCache* cache = nullptr);

struct TrainOptions {
  /// Output directory for final.kwt, best.kwt, state.kwt and metrics.csv;
  /// nothing is written when empty.
  std::filesystem::path out_dir;
  /// Continue from out_dir/state.kwt when present.
  bool resume = false;
  /// Stop (and save state) after this many total steps; for tests.
  std::optional<std::uint64_t> stop_after;
  std::function<void(const MetricRow&)> on_metrics;
};

struct TrainResult {
  KwsModel final_model;
  std::optional<KwsModel> best_model;
  std::vector<MetricRow> metrics;
  std::uint64_t steps_done = 0;
};

/// Adam on the batch loss. Cross variants fail at startup with
/// NoEnrollmentError listing every train speaker without an enrollment.
TrainResult train(const TrainConfig& cfg, const Corpus& corpus, const TrainOptions& opt = {});

/// Dev-split EER with embeddings paired as at evaluation time.
double dev_eer(const KwsModel& m, const Corpus& corpus, const TrainConfig& cfg);

}  // namespace kws
