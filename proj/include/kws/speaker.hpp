// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "kws/rng.hpp"
#include "kws/tensor.hpp"

namespace kws {

inline constexpr std::size_t kLatentDim = 16;
inline constexpr std::size_t kTdDim = 64;
inline constexpr std::size_t kTiDim = 256;

enum class EmbeddingKind { td, ti, absent };
enum class EnrollMode { self, cross, none };
enum class Variant { baseline, ti_self, ti_cross, td_cross };

std::string to_string(EmbeddingKind k);
std::string to_string(EnrollMode m);
std::string to_string(Variant v);
EmbeddingKind parse_embedding_kind(std::string_view s);
/// Throws ConfigError on anything but baseline|ti_self|ti_cross|td_cross.
Variant parse_variant(std::string_view s);

/// Embedding kind a variant conditions on; nullopt for the baseline.
std::optional<EmbeddingKind> variant_kind(Variant v);
std::optional<std::size_t> variant_embedding_dim(Variant v);

struct SpeakerProfile {
  std::string speaker_id;
  std::string locale;     // A..D
  std::string age_group;  // adult | child
  Tensor voice;           // unit norm, kLatentDim
};

struct SpeakerEmbedding {
  Tensor values;
  EmbeddingKind kind = EmbeddingKind::absent;
  EnrollMode mode = EnrollMode::none;
  std::optional<std::string> source_utterance_id;

  std::size_t dim() const { return values.size(); }
};

/// Stand-in for the TD/TI speaker encoders:
///   e = normalize(P_kind · v + sigma_kind · eps),
/// with P_kind a fixed seeded projection and eps drawn per (utterance, kind).
class EmbeddingSimulator {
 public:
  EmbeddingSimulator(std::uint64_t seed, double sigma_td = 0.1, double sigma_ti = 0.3);

  SpeakerEmbedding embed(const SpeakerProfile& profile, std::string_view utterance_id,
                         EmbeddingKind kind) const;

  double sigma(EmbeddingKind kind) const;

 private:
  std::uint64_t seed_;
  double sigma_td_, sigma_ti_;
  Tensor proj_td_, proj_ti_;
};

/// Zero vector of dimension e, kind absent.
SpeakerEmbedding constant_vector(std::size_t e);

double cosine_similarity(const Tensor& a, const Tensor& b);

/// speaker_id → enrollment embeddings. Reads may run concurrently; writes
/// take an exclusive lock.
class EnrollmentStore {
 public:
  EnrollmentStore() = default;
  EnrollmentStore(const EnrollmentStore& other);
  EnrollmentStore& operator=(const EnrollmentStore& other);

  void add(const std::string& speaker_id, SpeakerEmbedding e);
  /// Enrollments of this speaker and kind, in insertion order. Empty when
  /// there are none.
  std::vector<SpeakerEmbedding> lookup(const std::string& speaker_id, EmbeddingKind kind) const;
  std::size_t size() const;
  std::vector<std::string> speakers() const;

  /// One JSON object per line:
  /// {speaker_id, kind, dim, values, source_utterance_id}.
  void save_jsonl(const std::filesystem::path& path) const;
  static EnrollmentStore load_jsonl(const std::filesystem::path& path);

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::vector<SpeakerEmbedding>> entries_;
};

/// Minimal view of an utterance needed for pairing.
struct EnrollQuery {
  std::string utterance_id;
  const SpeakerProfile* speaker;
};

/// ti_self: TI embedding of this utterance. ti_cross/td_cross: a uniformly
/// chosen enrollment of the same speaker other than the query itself (any
/// enrollment if the query is the only one). Throws NoEnrollmentError when the
/// speaker has none. Baseline returns nullopt.
std::optional<SpeakerEmbedding> pair_enrollment(const EnrollQuery& q, const EnrollmentStore& store,
                                                const EmbeddingSimulator& sim, Variant variant,
                                                Rng& rng);

}  // namespace kws
