// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kws/speaker.hpp"

#include <cmath>
#include <fstream>
#include <mutex>

#include "json.hpp"
#include "kws/errors.hpp"

namespace kws {

std::string to_string(EmbeddingKind k) {
  switch (k) {
    case EmbeddingKind::td: return "TD";
    case EmbeddingKind::ti: return "TI";
    case EmbeddingKind::absent: return "ABSENT";
  }
  return "?";
}

std::string to_string(EnrollMode m) {
  switch (m) {
    case EnrollMode::self: return "self";
    case EnrollMode::cross: return "cross";
    case EnrollMode::none: return "none";
  }
  return "?";
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::ti_self: return "ti_self";
    case Variant::ti_cross: return "ti_cross";
    case Variant::td_cross: return "td_cross";
  }
  return "?";
}

EmbeddingKind parse_embedding_kind(std::string_view s) {
  if (s == "TD") return EmbeddingKind::td;
  if (s == "TI") return EmbeddingKind::ti;
  if (s == "ABSENT") return EmbeddingKind::absent;
  throw DataError("unknown embedding kind '" + std::string(s) + "'");
}

Variant parse_variant(std::string_view s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "ti_self") return Variant::ti_self;
  if (s == "ti_cross") return Variant::ti_cross;
  if (s == "td_cross") return Variant::td_cross;
  throw ConfigError("unknown variant '" + std::string(s) +
                    "' (expected baseline|ti_self|ti_cross|td_cross)");
}

std::optional<EmbeddingKind> variant_kind(Variant v) {
  switch (v) {
    case Variant::baseline: return std::nullopt;
    case Variant::ti_self:
    case Variant::ti_cross: return EmbeddingKind::ti;
    case Variant::td_cross: return EmbeddingKind::td;
  }
  return std::nullopt;
}

std::optional<std::size_t> variant_embedding_dim(Variant v) {
  auto k = variant_kind(v);
  if (!k) return std::nullopt;
  return *k == EmbeddingKind::td ? kTdDim : kTiDim;
}

namespace {

void normalize(Tensor& t) {
  double n = 0.0;
  for (double v : t.values()) n += v * v;
  n = std::sqrt(n);
  if (n == 0.0) return;
  for (double& v : t.values()) v /= n;
}

}  // namespace

EmbeddingSimulator::EmbeddingSimulator(std::uint64_t seed, double sigma_td, double sigma_ti)
    : seed_(seed), sigma_td_(sigma_td), sigma_ti_(sigma_ti) {
  if (!(sigma_td >= 0.0) || !(sigma_ti >= 0.0))
    throw ConfigError("embedding noise sigma must be >= 0");
  Rng td(sub_seed(seed, "embed-proj-td")), ti(sub_seed(seed, "embed-proj-ti"));
  proj_td_ = td.normal_tensor({kTdDim, kLatentDim});
  proj_ti_ = ti.normal_tensor({kTiDim, kLatentDim});
}

double EmbeddingSimulator::sigma(EmbeddingKind kind) const {
  return kind == EmbeddingKind::td ? sigma_td_ : sigma_ti_;
}

SpeakerEmbedding EmbeddingSimulator::embed(const SpeakerProfile& profile,
                                           std::string_view utterance_id,
                                           EmbeddingKind kind) const {
  if (kind == EmbeddingKind::absent) throw ValidationError("cannot synthesize an ABSENT embedding");
  if (profile.voice.size() != kLatentDim)
    throw DimensionError("speaker voice vector must have " + std::to_string(kLatentDim) + " entries");
  const Tensor& p = kind == EmbeddingKind::td ? proj_td_ : proj_ti_;
  const std::size_t e = p.rows();
  // Entries of P·v have unit variance, so sigma is the per-entry
  // noise-to-signal ratio for either kind.
  Rng rng(sub_seed(seed_, "embed-noise-" + to_string(kind), utterance_id));
  Tensor out({e});
  const double s = sigma(kind);
  for (std::size_t i = 0; i < e; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < kLatentDim; ++j) acc += p.at(i, j) * profile.voice[j];
    out[i] = acc + s * rng.normal();
  }
  normalize(out);
  return {std::move(out), kind, EnrollMode::self, std::string(utterance_id)};
}

SpeakerEmbedding constant_vector(std::size_t e) {
  if (e == 0) throw ValidationError("constant_vector: dimension must be >= 1");
  return {Tensor({e}), EmbeddingKind::absent, EnrollMode::none, std::nullopt};
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity: size mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

EnrollmentStore::EnrollmentStore(const EnrollmentStore& other) {
  std::shared_lock lock(other.mutex_);
  entries_ = other.entries_;
}

EnrollmentStore& EnrollmentStore::operator=(const EnrollmentStore& other) {
  if (this == &other) return *this;
  std::shared_lock src(other.mutex_);
  std::unique_lock dst(mutex_);
  entries_ = other.entries_;
  return *this;
}

void EnrollmentStore::add(const std::string& speaker_id, SpeakerEmbedding e) {
  if (!e.values.all_finite()) throw ValidationError("enrollment embedding is not finite");
  std::unique_lock lock(mutex_);
  entries_[speaker_id].push_back(std::move(e));
}

std::vector<SpeakerEmbedding> EnrollmentStore::lookup(const std::string& speaker_id,
                                                      EmbeddingKind kind) const {
  std::shared_lock lock(mutex_);
  std::vector<SpeakerEmbedding> out;
  auto it = entries_.find(speaker_id);
  if (it == entries_.end()) return out;
  for (const auto& e : it->second)
    if (e.kind == kind) out.push_back(e);
  return out;
}

std::size_t EnrollmentStore::size() const {
  std::shared_lock lock(mutex_);
  std::size_t n = 0;
  for (const auto& [_, v] : entries_) n += v.size();
  return n;
}

std::vector<std::string> EnrollmentStore::speakers() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

void EnrollmentStore::save_jsonl(const std::filesystem::path& path) const {
  std::shared_lock lock(mutex_);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [speaker, list] : entries_)
    for (const auto& e : list) {
      nlohmann::json j;
      j["speaker_id"] = speaker;
      j["kind"] = to_string(e.kind);
      j["dim"] = e.dim();
      j["values"] = std::vector<double>(e.values.values().begin(), e.values.values().end());
      j["source_utterance_id"] =
          e.source_utterance_id ? nlohmann::json(*e.source_utterance_id) : nlohmann::json();
      out << j.dump() << '\n';
    }
  if (!out) throw DataError("write failed for " + path.string());
}

EnrollmentStore EnrollmentStore::load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open enrollment store " + path.string());
  EnrollmentStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      SpeakerEmbedding e;
      e.kind = parse_embedding_kind(j.at("kind").get<std::string>());
      auto values = j.at("values").get<std::vector<double>>();
      if (values.size() != j.at("dim").get<std::size_t>())
        throw DataError("dim does not match the number of values");
      const std::size_t n = values.size();
      e.values = Tensor({n}, std::move(values));
      e.mode = EnrollMode::cross;
      if (!j.at("source_utterance_id").is_null())
        e.source_utterance_id = j.at("source_utterance_id").get<std::string>();
      store.add(j.at("speaker_id").get<std::string>(), std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    } catch (const DataError& ex) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return store;
}

std::optional<SpeakerEmbedding> pair_enrollment(const EnrollQuery& q, const EnrollmentStore& store,
                                                const EmbeddingSimulator& sim, Variant variant,
                                                Rng& rng) {
  switch (variant) {
    case Variant::baseline:
      return std::nullopt;
    case Variant::ti_self: {
      auto e = sim.embed(*q.speaker, q.utterance_id, EmbeddingKind::ti);
      e.mode = EnrollMode::self;
      return e;
    }
    case Variant::ti_cross:
    case Variant::td_cross: {
      auto all = store.lookup(q.speaker->speaker_id, *variant_kind(variant));
      if (all.empty()) throw NoEnrollmentError(q.speaker->speaker_id);
      std::vector<SpeakerEmbedding> others;
      for (auto& e : all)
        if (e.source_utterance_id != q.utterance_id) others.push_back(e);
      auto& pool = others.empty() ? all : others;
      SpeakerEmbedding e = pool[rng.index(pool.size())];
      e.mode = EnrollMode::cross;
      return e;
    }
  }
  return std::nullopt;
}

}  // namespace kws
