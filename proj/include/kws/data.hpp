// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kws/speaker.hpp"
#include "kws/tensor.hpp"

namespace kws {

enum class Split { train, dev, eval };
std::string to_string(Split s);
Split parse_split(std::string_view s);

struct CellConfig {
  std::string locale;
  std::string age_group;
  std::size_t speakers = 0;
  bool under_represented = false;
};

struct CorpusConfig {
  std::uint64_t seed = 7;
  std::size_t feature_dim = 40;
  std::vector<CellConfig> cells;
  std::size_t positives_per_speaker = 10;
  std::size_t negatives_per_speaker = 10;
  std::size_t min_frames = 32;
  std::size_t max_frames = 44;
  std::size_t keyword_phones = 4;
  std::size_t frames_per_phone = 6;
  double phone_scale = 1.0;
  double noise_std = 1.0;
  /// Per-(locale, age) bias added to every frame.
  double locale_shift = 0.5;
  double age_shift = 0.5;
  double under_shift_multiplier = 2.0;
  /// Number of ways of saying the keyword; a speaker's way is fixed by the
  /// voice. Confusable negatives use one of the other ways.
  std::size_t keyword_variants = 4;
  double variant_spread = 1.0;
  /// Pull of each voice towards the direction of its variant.
  double variant_separation = 1.25;
  /// Strength of the speaker-dependent distortion of the keyword.
  double speaker_warp = 0.5;
  double under_speaker_warp = 1.0;
  /// Warp of confusable negatives relative to the cell warp, applied with
  /// a foreign voice.
  double confusable_warp = 1.0;
  /// Weight of the voice direction shared by all speakers.
  double voice_mean_weight = 2.0;
  /// Negative mix: background, other word, partial keyword, confusable.
  std::array<double, 4> negative_mix{0.25, 0.25, 0.2, 0.3};
  std::array<double, 3> split_fractions{0.7, 0.1, 0.2};
  std::size_t augment_copies = 2;
  double snr_min_db = 5.0;
  double snr_max_db = 30.0;
  double sigma_td = 0.1;
  double sigma_ti = 0.3;

  /// Four locales × {adult, child}; A/child and B/child hold 19 speakers
  /// each, the other cells 27.
  static CorpusConfig defaults();
  /// Throws ConfigError naming the offending field or cell.
  void validate() const;
  std::size_t total_speakers() const;
};

nlohmann::json corpus_config_to_json(const CorpusConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
CorpusConfig corpus_config_from_json(const nlohmann::json& j,
                                     const CorpusConfig& base = CorpusConfig::defaults());

struct Utterance {
  std::string id;
  std::string speaker_id;
  std::string locale;
  std::string age_group;
  Split split = Split::train;
  bool positive = false;
  /// Empty for positives; background|other_word|partial|confusable.
  std::string negative_type;
  Tensor features;          // [F × D]
  std::vector<int> labels;  // per frame, 1 inside the keyword span
  std::optional<std::pair<std::size_t, std::size_t>> span;  // [start, end)
};

struct Corpus {
  CorpusConfig config;
  std::vector<SpeakerProfile> speakers;
  std::vector<Utterance> utterances;
  EnrollmentStore enrollments;

  const SpeakerProfile& speaker(const std::string& id) const;
  std::vector<const Utterance*> split(Split s) const;
  EmbeddingSimulator simulator() const;
  /// Stable identifier of the corpus contents (hash of the resolved config).
  std::string corpus_id() const;

 private:
  mutable std::map<std::string, std::size_t> index_;
};

/// Deterministic in the config (including its seed). Speakers are generated
/// independently from per-speaker sub-seeds.
Corpus generate_corpus(const CorpusConfig& cfg);

/// speaker_id → split, stratified by (locale, age) cell. Throws ConfigError
/// when a cell cannot cover every split with a non-zero fraction.
std::map<std::string, Split> split_by_speaker(const std::vector<SpeakerProfile>& speakers,
                                              const std::array<double, 3>& fractions,
                                              std::uint64_t seed);

/// Adds seeded Gaussian noise scaled so the realized signal-to-noise ratio is
/// exactly snr_db (up to rounding). snr_db must lie in [0, 40].
Tensor augment_noise(const Tensor& x, double snr_db, std::uint64_t seed);
double measured_snr_db(const Tensor& clean, const Tensor& noisy);

/// On-disk layout:
///   corpus.json        resolved config, seed and counts
///   speakers.jsonl     one profile per line
///   manifest.jsonl     one utterance record per line
///   enrollments.jsonl  enrollment store
///   features/<split>.kwt  tensors "<id>/features" and "<id>/labels"
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

/// Manifest line for one utterance.
nlohmann::json manifest_record(const Utterance& u, const Corpus& corpus);

}  // namespace kws
