// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <map>

#include "doctest.h"
#include "kws/data.hpp"
#include "kws/errors.hpp"
#include "kws/speaker.hpp"
#include "test_util.hpp"

using namespace kws;

namespace {

SpeakerProfile profile(const std::string& id, std::uint64_t seed) {
  Rng rng(seed);
  Tensor v = rng.normal_tensor({kLatentDim});
  double n = 0.0;
  for (double x : v.values()) n += x * x;
  for (double& x : v.values()) x /= std::sqrt(n);
  return {id, "A", "adult", v};
}

}  // namespace

TEST_CASE("synth_embedding: deterministic, unit norm, full dimensions") {
  EmbeddingSimulator sim(3);
  auto p = profile("s1", 1);
  auto a = sim.embed(p, "u1", EmbeddingKind::td);
  auto b = sim.embed(p, "u1", EmbeddingKind::td);
  CHECK(a.values == b.values);
  CHECK(a.dim() == 64);
  CHECK(sim.embed(p, "u1", EmbeddingKind::ti).dim() == 256);
  CHECK(a.source_utterance_id == "u1");
  double n = 0.0;
  for (double x : a.values.values()) n += x * x;
  CHECK(n == doctest::Approx(1.0));
  CHECK(sim.embed(p, "u2", EmbeddingKind::td).values != a.values);
}

TEST_CASE("synth_embedding: zero noise gives identical embeddings per speaker") {
  EmbeddingSimulator sim(4, 0.0, 0.0);
  auto p = profile("s1", 2);
  auto a = sim.embed(p, "u1", EmbeddingKind::ti), b = sim.embed(p, "u2", EmbeddingKind::ti);
  CHECK(cosine_similarity(a.values, b.values) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("synth_embedding: TD is tighter than TI, both tighter than cross-speaker") {
  // voices drawn exactly as the corpus does, so the shared mean direction is included
  CorpusConfig cfg = CorpusConfig::defaults();
  cfg.cells = {{"A", "adult", 100, false}};
  cfg.positives_per_speaker = 1;
  cfg.negatives_per_speaker = 0;
  cfg.split_fractions = {0.8, 0.1, 0.1};
  Corpus c = generate_corpus(cfg);
  const EmbeddingSimulator sim = c.simulator();
  std::map<EmbeddingKind, double> within, cross;
  for (auto kind : {EmbeddingKind::td, EmbeddingKind::ti}) {
    std::vector<std::vector<Tensor>> per(c.speakers.size());
    for (std::size_t s = 0; s < c.speakers.size(); ++s)
      for (int u = 0; u < 10; ++u)
        per[s].push_back(sim.embed(c.speakers[s], "u" + std::to_string(u), kind).values);
    double w = 0.0, x = 0.0;
    std::size_t nw = 0, nx = 0;
    for (std::size_t s = 0; s < per.size(); ++s)
      for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = i + 1; j < 10; ++j, ++nw) w += cosine_similarity(per[s][i], per[s][j]);
    for (std::size_t s = 0; s + 1 < per.size(); ++s)
      for (std::size_t i = 0; i < 10; ++i, ++nx) x += cosine_similarity(per[s][i], per[s + 1][i]);
    within[kind] = w / static_cast<double>(nw);
    cross[kind] = x / static_cast<double>(nx);
  }
  CHECK(within[EmbeddingKind::td] > within[EmbeddingKind::ti]);
  CHECK(within[EmbeddingKind::ti] > cross[EmbeddingKind::ti]);
  CHECK(within[EmbeddingKind::td] - cross[EmbeddingKind::td] >= 0.2);
  CHECK(within[EmbeddingKind::ti] - cross[EmbeddingKind::ti] >= 0.2);
}

TEST_CASE("constant_vector") {
  auto a = constant_vector(64);
  CHECK(a.values == Tensor({64}));
  CHECK(a.kind == EmbeddingKind::absent);
  CHECK(constant_vector(64).values == a.values);
  CHECK_THROWS_AS(constant_vector(0), ValidationError);
}

TEST_CASE("pair_enrollment: self, single, uniform, missing") {
  EmbeddingSimulator sim(5);
  auto p = profile("s1", 3), q = profile("s2", 4);
  EnrollmentStore store;
  Rng rng(1);

  auto self = pair_enrollment({"u9", &p}, store, sim, Variant::ti_self, rng);
  REQUIRE(self);
  CHECK(self->source_utterance_id == "u9");
  CHECK(self->mode == EnrollMode::self);
  CHECK(cosine_similarity(self->values, sim.embed(p, "u9", EmbeddingKind::ti).values) == 1.0);

  CHECK_THROWS_AS(pair_enrollment({"u9", &p}, store, sim, Variant::td_cross, rng), NoEnrollmentError);
  try {
    pair_enrollment({"u9", &p}, store, sim, Variant::td_cross, rng);
  } catch (const NoEnrollmentError& e) {
    CHECK(e.speaker_id == "s1");
  }

  store.add("s1", sim.embed(p, "e0", EmbeddingKind::td));
  store.add("s2", sim.embed(q, "f0", EmbeddingKind::td));
  auto one = pair_enrollment({"u9", &p}, store, sim, Variant::td_cross, rng);
  CHECK(one->source_utterance_id == "e0");
  CHECK(one->kind == EmbeddingKind::td);
  CHECK(one->dim() == 64);
  // the query itself is the only enrollment: fall back to it
  CHECK(pair_enrollment({"e0", &p}, store, sim, Variant::td_cross, rng)->source_utterance_id == "e0");

  for (int i = 1; i < 4; ++i) store.add("s1", sim.embed(p, "e" + std::to_string(i), EmbeddingKind::td));
  std::map<std::string, int> counts;
  for (int i = 0; i < 10000; ++i)
    ++counts[*pair_enrollment({"u9", &p}, store, sim, Variant::td_cross, rng)->source_utterance_id];
  CHECK(counts.size() == 4);
  for (const auto& [id, n] : counts) CHECK(std::abs(n / 10000.0 - 0.25) <= 0.02);

  // a cross pick never returns the query utterance when others exist
  for (int i = 0; i < 200; ++i)
    CHECK(pair_enrollment({"e2", &p}, store, sim, Variant::td_cross, rng)->source_utterance_id != "e2");
  CHECK_FALSE(pair_enrollment({"u9", &p}, store, sim, Variant::baseline, rng).has_value());
  CHECK_THROWS_AS(pair_enrollment({"u9", &p}, store, sim, Variant::ti_cross, rng), NoEnrollmentError);
}

TEST_CASE("enrollment store: lookups and JSONL round trip") {
  EmbeddingSimulator sim(6);
  auto p = profile("s1", 5), q = profile("s2", 6);
  EnrollmentStore store;
  CHECK(store.lookup("nobody", EmbeddingKind::td).empty());
  store.add("s1", sim.embed(p, "a", EmbeddingKind::td));
  store.add("s1", sim.embed(p, "a", EmbeddingKind::ti));
  store.add("s2", sim.embed(q, "b", EmbeddingKind::td));
  CHECK(store.size() == 3);
  for (const auto& e : store.lookup("s1", EmbeddingKind::td)) CHECK(e.source_utterance_id == "a");

  test::TempDir dir("store");
  store.save_jsonl(dir / "e.jsonl");
  auto back = EnrollmentStore::load_jsonl(dir / "e.jsonl");
  CHECK(back.size() == 3);
  CHECK(back.lookup("s1", EmbeddingKind::ti)[0].values == store.lookup("s1", EmbeddingKind::ti)[0].values);
  CHECK(back.lookup("s2", EmbeddingKind::td)[0].values.size() == 64);
  CHECK(back.speakers() == std::vector<std::string>{"s1", "s2"});
}

TEST_CASE("variant parsing") {
  CHECK(parse_variant("td_cross") == Variant::td_cross);
  CHECK_THROWS_AS(parse_variant("bogus"), ConfigError);
  CHECK(variant_embedding_dim(Variant::ti_self) == 256u);
  CHECK_FALSE(variant_embedding_dim(Variant::baseline).has_value());
}
