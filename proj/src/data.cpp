// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kws/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>

#include "kws/checkpoint.hpp"
#include "kws/errors.hpp"

namespace kws {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::eval: return "eval";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "eval") return Split::eval;
  throw DataError("unknown split '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- config

CorpusConfig CorpusConfig::defaults() {
  CorpusConfig c;
  for (const char* loc : {"A", "B", "C", "D"})
    for (const char* age : {"adult", "child"}) {
      const bool under = std::string(age) == "child" && (std::string(loc) == "A" || std::string(loc) == "B");
      c.cells.push_back({loc, age, under ? 19u : 27u, under});
    }
  return c;
}

std::size_t CorpusConfig::total_speakers() const {
  std::size_t n = 0;
  for (const auto& c : cells) n += c.speakers;
  return n;
}

void CorpusConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("corpus: " + m); };
  if (feature_dim == 0) fail("feature_dim must be >= 1");
  if (cells.empty()) fail("at least one (locale, age_group) cell is required");
  std::set<std::pair<std::string, std::string>> seen;
  std::size_t under = 0;
  for (const auto& c : cells) {
    const std::string name = c.locale + "/" + c.age_group;
    if (c.locale.empty() || c.age_group.empty()) fail("cell with empty locale or age_group");
    if (!seen.insert({c.locale, c.age_group}).second) fail("duplicate cell " + name);
    if (c.speakers < 2) fail("cell " + name + " has " + std::to_string(c.speakers) + " speaker(s); at least 2 are needed");
    if (c.under_represented) under += c.speakers;
  }
  if (static_cast<double>(under) > 0.2 * static_cast<double>(total_speakers()))
    fail("under-represented cells exceed 20% of all speakers");
  if (positives_per_speaker == 0) fail("positives_per_speaker must be >= 1");
  if (keyword_phones == 0 || frames_per_phone == 0) fail("keyword must have at least one frame");
  const std::size_t kw = keyword_phones * frames_per_phone;
  if (kw < 5) fail("keyword span must be at least 5 frames");
  if (min_frames < 10 || min_frames > max_frames) fail("frame range must satisfy 10 <= min_frames <= max_frames");
  if (min_frames < kw) fail("min_frames must fit the keyword (" + std::to_string(kw) + " frames)");
  if (!(noise_std > 0.0)) fail("noise_std must be > 0");
  if (keyword_variants == 0 || keyword_variants > kLatentDim - 1)
    fail("keyword_variants must lie in [1, " + std::to_string(kLatentDim - 1) + "]");
  for (double v : {phone_scale, locale_shift, age_shift, under_shift_multiplier, speaker_warp,
                   under_speaker_warp, confusable_warp, variant_spread, variant_separation, voice_mean_weight, sigma_td, sigma_ti})
    if (!(v >= 0.0) || !std::isfinite(v)) fail("scale parameters must be finite and >= 0");
  double mix = 0.0;
  for (double v : negative_mix) {
    if (!(v >= 0.0)) fail("negative_mix entries must be >= 0");
    mix += v;
  }
  if (negatives_per_speaker > 0 && !(mix > 0.0)) fail("negative_mix must have a positive entry");
  double fr = 0.0;
  for (double v : split_fractions) {
    if (!(v >= 0.0)) fail("split fractions must be >= 0");
    fr += v;
  }
  if (std::abs(fr - 1.0) > 1e-9) fail("split fractions must sum to 1");
  if (!(0.0 <= snr_min_db && snr_min_db <= snr_max_db && snr_max_db <= 40.0))
    fail("SNR range must satisfy 0 <= snr_min_db <= snr_max_db <= 40");
}

namespace {

using json = nlohmann::json;
using Setter = std::function<void(CorpusConfig&, const json&)>;

template <class T, class M>
std::pair<const std::string, Setter> field(const char* name, M CorpusConfig::*member) {
  return {name, [member](CorpusConfig& c, const json& j) { c.*member = j.get<T>(); }};
}

const std::map<std::string, Setter>& corpus_setters() {
  static const std::map<std::string, Setter> setters = {
      field<std::uint64_t>("seed", &CorpusConfig::seed),
      field<std::size_t>("feature_dim", &CorpusConfig::feature_dim),
      field<std::size_t>("positives_per_speaker", &CorpusConfig::positives_per_speaker),
      field<std::size_t>("negatives_per_speaker", &CorpusConfig::negatives_per_speaker),
      field<std::size_t>("min_frames", &CorpusConfig::min_frames),
      field<std::size_t>("max_frames", &CorpusConfig::max_frames),
      field<std::size_t>("keyword_phones", &CorpusConfig::keyword_phones),
      field<std::size_t>("frames_per_phone", &CorpusConfig::frames_per_phone),
      field<double>("phone_scale", &CorpusConfig::phone_scale),
      field<double>("noise_std", &CorpusConfig::noise_std),
      field<double>("locale_shift", &CorpusConfig::locale_shift),
      field<double>("age_shift", &CorpusConfig::age_shift),
      field<double>("under_shift_multiplier", &CorpusConfig::under_shift_multiplier),
      field<std::size_t>("keyword_variants", &CorpusConfig::keyword_variants),
      field<double>("variant_spread", &CorpusConfig::variant_spread),
      field<double>("variant_separation", &CorpusConfig::variant_separation),
      field<double>("speaker_warp", &CorpusConfig::speaker_warp),
      field<double>("under_speaker_warp", &CorpusConfig::under_speaker_warp),
      field<double>("confusable_warp", &CorpusConfig::confusable_warp),
      field<double>("voice_mean_weight", &CorpusConfig::voice_mean_weight),
      field<std::array<double, 4>>("negative_mix", &CorpusConfig::negative_mix),
      field<std::array<double, 3>>("split_fractions", &CorpusConfig::split_fractions),
      field<std::size_t>("augment_copies", &CorpusConfig::augment_copies),
      field<double>("snr_min_db", &CorpusConfig::snr_min_db),
      field<double>("snr_max_db", &CorpusConfig::snr_max_db),
      field<double>("sigma_td", &CorpusConfig::sigma_td),
      field<double>("sigma_ti", &CorpusConfig::sigma_ti),
      {"cells",
       [](CorpusConfig& c, const json& j) {
         c.cells.clear();
         for (const auto& cell : j) {
           CellConfig cc;
           for (const auto& [k, v] : cell.items()) {
             if (k == "locale") cc.locale = v.get<std::string>();
             else if (k == "age_group") cc.age_group = v.get<std::string>();
             else if (k == "speakers") cc.speakers = v.get<std::size_t>();
             else if (k == "under_represented") cc.under_represented = v.get<bool>();
             else throw ConfigError("corpus.cells: unknown key '" + k + "'");
           }
           c.cells.push_back(cc);
         }
       }},
  };
  return setters;
}

}  // namespace

json corpus_config_to_json(const CorpusConfig& c) {
  json cells = json::array();
  for (const auto& cell : c.cells)
    cells.push_back({{"locale", cell.locale},
                     {"age_group", cell.age_group},
                     {"speakers", cell.speakers},
                     {"under_represented", cell.under_represented}});
  return {{"seed", c.seed},
          {"feature_dim", c.feature_dim},
          {"cells", cells},
          {"positives_per_speaker", c.positives_per_speaker},
          {"negatives_per_speaker", c.negatives_per_speaker},
          {"min_frames", c.min_frames},
          {"max_frames", c.max_frames},
          {"keyword_phones", c.keyword_phones},
          {"frames_per_phone", c.frames_per_phone},
          {"phone_scale", c.phone_scale},
          {"noise_std", c.noise_std},
          {"locale_shift", c.locale_shift},
          {"age_shift", c.age_shift},
          {"under_shift_multiplier", c.under_shift_multiplier},
          {"keyword_variants", c.keyword_variants},
          {"variant_spread", c.variant_spread},
          {"variant_separation", c.variant_separation},
          {"speaker_warp", c.speaker_warp},
          {"under_speaker_warp", c.under_speaker_warp},
          {"confusable_warp", c.confusable_warp},
          {"voice_mean_weight", c.voice_mean_weight},
          {"negative_mix", c.negative_mix},
          {"split_fractions", c.split_fractions},
          {"augment_copies", c.augment_copies},
          {"snr_min_db", c.snr_min_db},
          {"snr_max_db", c.snr_max_db},
          {"sigma_td", c.sigma_td},
          {"sigma_ti", c.sigma_ti}};
}

CorpusConfig corpus_config_from_json(const json& j, const CorpusConfig& base) {
  if (!j.is_object()) throw ConfigError("corpus config must be a JSON object");
  CorpusConfig c = base;
  const auto& setters = corpus_setters();
  for (const auto& [k, v] : j.items()) {
    auto it = setters.find(k);
    if (it == setters.end()) throw ConfigError("corpus: unknown key '" + k + "'");
    try {
      it->second(c, v);
    } catch (const json::exception& e) {
      throw ConfigError("corpus." + k + ": " + e.what());
    }
  }
  return c;
}

// ---------------------------------------------------------------- corpus

const SpeakerProfile& Corpus::speaker(const std::string& id) const {
  if (index_.size() != speakers.size()) {
    index_.clear();
    for (std::size_t i = 0; i < speakers.size(); ++i) index_[speakers[i].speaker_id] = i;
  }
  auto it = index_.find(id);
  if (it == index_.end()) throw DataError("unknown speaker '" + id + "'");
  return speakers[it->second];
}

std::vector<const Utterance*> Corpus::split(Split s) const {
  std::vector<const Utterance*> out;
  for (const auto& u : utterances)
    if (u.split == s) out.push_back(&u);
  return out;
}

EmbeddingSimulator Corpus::simulator() const {
  return EmbeddingSimulator(sub_seed(config.seed, "embeddings"), config.sigma_td, config.sigma_ti);
}

std::string Corpus::corpus_id() const {
  const std::string s = corpus_config_to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

Tensor unit(Tensor t) {
  double n = 0.0;
  for (double v : t.values()) n += v * v;
  n = std::sqrt(n);
  for (double& v : t.values()) v /= n;
  return t;
}

// Fixed acoustic world shared by every speaker of one corpus.
struct World {
  Tensor voice_mean;                 // [16]
  std::vector<Tensor> keyword;       // phones, [D] each
  std::vector<Tensor> warp;          // per keyword phone, [D × 16]
  std::vector<Tensor> variant_dirs;  // [16], orthogonal to voice_mean
  std::vector<std::vector<Tensor>> variant_offsets;  // per variant and phone
  std::vector<std::vector<Tensor>> vocabulary;  // other words
  std::map<std::string, Tensor> locale_bias;
  Tensor child_bias;
};

constexpr std::size_t kVocabulary = 8;

World make_world(const CorpusConfig& cfg) {
  World w;
  const std::size_t d = cfg.feature_dim;
  Rng rng(sub_seed(cfg.seed, "world"));
  w.voice_mean = unit(rng.normal_tensor({kLatentDim}));
  for (std::size_t p = 0; p < cfg.keyword_phones; ++p)
    w.keyword.push_back(rng.normal_tensor({d}, cfg.phone_scale));
  for (std::size_t p = 0; p < cfg.keyword_phones; ++p)
    w.warp.push_back(rng.normal_tensor({d, kLatentDim}));
  Rng vr(sub_seed(cfg.seed, "variants"));
  for (std::size_t k = 0; k < cfg.keyword_variants; ++k) {
    Tensor a = vr.normal_tensor({kLatentDim});
    double along = 0.0;
    for (std::size_t j = 0; j < kLatentDim; ++j) along += a[j] * w.voice_mean[j];
    for (std::size_t j = 0; j < kLatentDim; ++j) a[j] -= along * w.voice_mean[j];
    w.variant_dirs.push_back(unit(a));
    std::vector<Tensor> offsets;
    for (std::size_t p = 0; p < cfg.keyword_phones; ++p)
      offsets.push_back(k == 0 && cfg.keyword_variants == 1 ? Tensor({d})
                                                             : vr.normal_tensor({d}, cfg.variant_spread));
    w.variant_offsets.push_back(std::move(offsets));
  }
  for (std::size_t v = 0; v < kVocabulary; ++v) {
    std::vector<Tensor> word;
    for (std::size_t p = 0; p < cfg.keyword_phones; ++p)
      word.push_back(rng.normal_tensor({d}, cfg.phone_scale));
    w.vocabulary.push_back(std::move(word));
  }
  for (const auto& c : cfg.cells)
    if (!w.locale_bias.count(c.locale))
      w.locale_bias[c.locale] = Rng(sub_seed(cfg.seed, "locale-bias", c.locale)).normal_tensor({d}, cfg.locale_shift);
  w.child_bias = Rng(sub_seed(cfg.seed, "child-bias")).normal_tensor({d}, cfg.age_shift);
  return w;
}

// Voices gather around one variant direction each, picked at random unless
// given.
Tensor draw_voice(const World& w, const CorpusConfig& cfg, Rng& rng,
                  std::optional<std::size_t> group = std::nullopt) {
  Tensor v({kLatentDim});
  const double s = 1.0 / std::sqrt(static_cast<double>(kLatentDim));
  for (std::size_t j = 0; j < kLatentDim; ++j)
    v[j] = cfg.voice_mean_weight * w.voice_mean[j] + s * rng.normal();
  if (cfg.keyword_variants > 1) {
    const std::size_t g = group ? *group : rng.index(cfg.keyword_variants);
    for (std::size_t j = 0; j < kLatentDim; ++j) v[j] += cfg.variant_separation * w.variant_dirs[g][j];
  }
  return unit(v);
}

// Phone with a voice-dependent distortion: phone + strength · M · voice.
Tensor warped(const Tensor& phone, const Tensor& m, const Tensor& voice, double strength) {
  Tensor out = phone;
  if (strength == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < kLatentDim; ++j) acc += m.at(i, j) * voice[j];
    out[i] += strength * acc;
  }
  return out;
}

std::size_t voice_variant(const World& w, const Tensor& voice) {
  std::size_t best = 0;
  double best_score = -1e300;
  for (std::size_t k = 0; k < w.variant_dirs.size(); ++k) {
    double score = 0.0;
    for (std::size_t j = 0; j < kLatentDim; ++j) score += w.variant_dirs[k][j] * voice[j];
    if (score > best_score) best = k, best_score = score;
  }
  return best;
}

// The keyword as said in one variant by one voice.
std::vector<Tensor> keyword_phones(const World& w, std::size_t variant, const Tensor& voice, double warp) {
  std::vector<Tensor> phones;
  for (std::size_t p = 0; p < w.keyword.size(); ++p) {
    Tensor target = w.keyword[p];
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += w.variant_offsets[variant][p][i];
    phones.push_back(warped(target, w.warp[p], voice, warp));
  }
  return phones;
}

// Linear glide between consecutive phone targets.
void insert_word(Tensor& x, std::size_t offset, const std::vector<Tensor>& phones, std::size_t fpp) {
  const std::size_t d = x.cols();
  for (std::size_t p = 0; p < phones.size(); ++p)
    for (std::size_t k = 0; k < fpp; ++k) {
      const double w = static_cast<double>(k) / static_cast<double>(fpp);
      const Tensor& a = phones[p];
      const Tensor& b = p + 1 < phones.size() ? phones[p + 1] : phones[p];
      auto row = x.row(offset + p * fpp + k);
      for (std::size_t i = 0; i < d; ++i) row[i] += (1.0 - w) * a[i] + w * b[i];
    }
}

std::size_t categorical(Rng& rng, const std::array<double, 4>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

constexpr const char* kNegativeTypes[] = {"background", "other_word", "partial", "confusable"};

std::vector<Utterance> speaker_utterances(const World& w, const CorpusConfig& cfg,
                                          const SpeakerProfile& s, const CellConfig& cell) {
  Rng rng(sub_seed(cfg.seed, "utterances", s.speaker_id));
  const std::size_t d = cfg.feature_dim, fpp = cfg.frames_per_phone;
  const std::size_t kw_len = cfg.keyword_phones * fpp;
  const double shift_mult = cell.under_represented ? cfg.under_shift_multiplier : 1.0;
  const double warp = cell.under_represented ? cfg.under_speaker_warp : cfg.speaker_warp;
  Tensor bias = w.locale_bias.at(cell.locale);
  if (cell.age_group == "child")
    for (std::size_t i = 0; i < d; ++i) bias[i] += w.child_bias[i];
  for (double& b : bias.values()) b *= shift_mult;

  const std::size_t own_variant = voice_variant(w, s.voice);
  const std::vector<Tensor> own_keyword = keyword_phones(w, own_variant, s.voice, warp);

  std::vector<Utterance> out;
  auto make = [&](bool positive, std::size_t idx) {
    Utterance u;
    char buf[16];
    std::snprintf(buf, sizeof buf, "-%c%02zu", positive ? 'p' : 'n', idx);
    u.id = s.speaker_id + buf;
    u.speaker_id = s.speaker_id;
    u.locale = s.locale;
    u.age_group = s.age_group;
    u.positive = positive;
    const std::size_t frames = cfg.min_frames + rng.index(cfg.max_frames - cfg.min_frames + 1);
    u.features = Tensor({frames, d});
    for (std::size_t f = 0; f < frames; ++f) {
      auto row = u.features.row(f);
      for (std::size_t i = 0; i < d; ++i) row[i] = bias[i] + cfg.noise_std * rng.normal();
    }
    u.labels.assign(frames, 0);
    const std::size_t offset = rng.index(frames - kw_len + 1);
    if (positive) {
      insert_word(u.features, offset, own_keyword, fpp);
      for (std::size_t f = offset; f < offset + kw_len; ++f) u.labels[f] = 1;
      u.span = std::make_pair(offset, offset + kw_len);
    } else {
      const std::size_t type = categorical(rng, cfg.negative_mix);
      u.negative_type = kNegativeTypes[type];
      const auto& word = w.vocabulary[rng.index(w.vocabulary.size())];
      if (type == 1) {
        insert_word(u.features, offset, word, fpp);
      } else if (type == 2) {
        // keyword onset, then a different word's ending
        std::vector<Tensor> phones;
        const std::size_t keep = std::max<std::size_t>(1, cfg.keyword_phones / 2);
        for (std::size_t p = 0; p < cfg.keyword_phones; ++p)
          phones.push_back(p < keep ? own_keyword[p] : word[p]);
        insert_word(u.features, offset, phones, fpp);
      } else if (type == 3) {
        // the keyword as another voice would say it, in another variant
        // when there is one
        std::size_t variant = own_variant;
        if (cfg.keyword_variants > 1) {
          variant = rng.index(cfg.keyword_variants - 1);
          if (variant >= own_variant) ++variant;
        }
        const Tensor foreign = draw_voice(w, cfg, rng, variant);
        insert_word(u.features, offset, keyword_phones(w, variant, foreign, cfg.confusable_warp * warp), fpp);
      }
    }
    out.push_back(std::move(u));
  };
  for (std::size_t i = 0; i < cfg.positives_per_speaker; ++i) make(true, i);
  for (std::size_t i = 0; i < cfg.negatives_per_speaker; ++i) make(false, i);
  return out;
}

}  // namespace

std::map<std::string, Split> split_by_speaker(const std::vector<SpeakerProfile>& speakers,
                                              const std::array<double, 3>& fractions,
                                              std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be >= 0");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> cells;
  for (const auto& s : speakers) cells[{s.locale, s.age_group}].push_back(s.speaker_id);

  std::map<std::string, Split> out;
  for (auto& [cell, ids] : cells) {
    const std::string name = cell.first + "/" + cell.second;
    const std::size_t n = ids.size();
    // dev and eval sizes by rounding, at least one speaker when requested;
    // train takes the remainder
    auto share = [n](double f) -> std::size_t {
      if (f == 0.0) return 0;
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(n))));
    };
    const std::size_t n_eval = share(fractions[2]), n_dev = share(fractions[1]);
    if (n_eval + n_dev > n || (fractions[0] > 0.0 && n_eval + n_dev == n))
      throw ConfigError("cell " + name + " has " + std::to_string(n) +
                        " speakers, too few to cover every split");
    std::sort(ids.begin(), ids.end());
    Rng rng(sub_seed(seed, "split", name));
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);
    for (std::size_t i = 0; i < n; ++i)
      out[ids[i]] = i < n_eval ? Split::eval : i < n_eval + n_dev ? Split::dev : Split::train;
  }
  return out;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  const World world = make_world(cfg);
  Corpus corpus;
  corpus.config = cfg;
  std::vector<const CellConfig*> cell_of;
  for (const auto& cell : cfg.cells)
    for (std::size_t i = 0; i < cell.speakers; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "s%03zu", corpus.speakers.size());
      Rng rng(sub_seed(cfg.seed, "voice", std::string(buf)));
      corpus.speakers.push_back({buf, cell.locale, cell.age_group, draw_voice(world, cfg, rng)});
      cell_of.push_back(&cell);
    }
  const auto splits = split_by_speaker(corpus.speakers, cfg.split_fractions, cfg.seed);

  const std::size_t n = corpus.speakers.size();
  std::vector<std::vector<Utterance>> per_speaker(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i)
    per_speaker[i] = speaker_utterances(world, cfg, corpus.speakers[i], *cell_of[i]);

  const EmbeddingSimulator sim = corpus.simulator();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = corpus.speakers[i];
    for (auto& u : per_speaker[i]) {
      u.split = splits.at(s.speaker_id);
      if (u.positive) {
        for (auto kind : {EmbeddingKind::td, EmbeddingKind::ti}) {
          auto e = sim.embed(s, u.id, kind);
          e.mode = EnrollMode::cross;
          corpus.enrollments.add(s.speaker_id, std::move(e));
        }
      }
      corpus.utterances.push_back(std::move(u));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------- noise

Tensor augment_noise(const Tensor& x, double snr_db, std::uint64_t seed) {
  if (!(snr_db >= 0.0 && snr_db <= 40.0)) throw ValidationError("augment_noise: snr_db must lie in [0, 40]");
  Rng rng(seed);
  Tensor noise = rng.normal_tensor(x.shape());
  double ps = 0.0, pn = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ps += x[i] * x[i];
    pn += noise[i] * noise[i];
  }
  Tensor out = x;
  if (ps == 0.0 || pn == 0.0) return out;
  const double scale = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * noise[i];
  return out;
}

double measured_snr_db(const Tensor& clean, const Tensor& noisy) {
  if (clean.shape() != noisy.shape()) throw DimensionError("measured_snr_db: shape mismatch");
  double ps = 0.0, pn = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    ps += clean[i] * clean[i];
    const double n = noisy[i] - clean[i];
    pn += n * n;
  }
  return 10.0 * std::log10(ps / pn);
}

// ---------------------------------------------------------------- files

namespace {

std::string feature_file(Split s) { return "features/" + to_string(s) + ".kwt"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw DataError("cannot write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw CorruptFileError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

json manifest_record(const Utterance& u, const Corpus& corpus) {
  json refs = json::array();
  for (const auto& e : corpus.enrollments.lookup(u.speaker_id, EmbeddingKind::td))
    if (e.source_utterance_id && *e.source_utterance_id != u.id) refs.push_back(*e.source_utterance_id);
  return {{"id", u.id},
          {"speaker_id", u.speaker_id},
          {"locale", u.locale},
          {"age_group", u.age_group},
          {"split", to_string(u.split)},
          {"polarity", u.positive ? "positive" : "negative"},
          {"negative_type", u.positive ? json() : json(u.negative_type)},
          {"frames", u.features.rows()},
          {"span", u.span ? json::array({u.span->first, u.span->second}) : json()},
          {"feature_file", feature_file(u.split)},
          {"feature_key", u.id + "/features"},
          {"label_key", u.id + "/labels"},
          {"enrollment_refs", refs}};
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  std::map<std::string, std::size_t> cell_speakers;
  for (const auto& s : corpus.speakers) ++cell_speakers[s.locale + "/" + s.age_group];
  std::size_t pos = 0, neg = 0;
  for (const auto& u : corpus.utterances) (u.positive ? pos : neg)++;
  json meta = {{"format", "kws-corpus"},
               {"version", 1},
               {"corpus_id", corpus.corpus_id()},
               {"config", corpus_config_to_json(corpus.config)},
               {"counts", {{"speakers", corpus.speakers.size()},
                           {"positives", pos},
                           {"negatives", neg},
                           {"speakers_per_cell", cell_speakers}}}};
  write_text(dir / "corpus.json", meta.dump(2) + "\n");

  std::string speakers;
  for (const auto& s : corpus.speakers)
    speakers += json{{"speaker_id", s.speaker_id},
                     {"locale", s.locale},
                     {"age_group", s.age_group},
                     {"voice", std::vector<double>(s.voice.values().begin(), s.voice.values().end())}}
                    .dump() + "\n";
  write_text(dir / "speakers.jsonl", speakers);

  std::string manifest;
  for (const auto& u : corpus.utterances) manifest += manifest_record(u, corpus).dump() + "\n";
  write_text(dir / "manifest.jsonl", manifest);

  for (Split s : {Split::train, Split::dev, Split::eval}) {
    TensorFile f;
    f.header = {{"kind", "kws-features"}, {"split", to_string(s)}, {"corpus_id", corpus.corpus_id()}};
    for (const auto& u : corpus.utterances) {
      if (u.split != s) continue;
      f.tensors.emplace_back(u.id + "/features", u.features);
      f.tensors.emplace_back(u.id + "/labels",
                             Tensor({u.labels.size()}, std::vector<double>(u.labels.begin(), u.labels.end())));
    }
    write_tensor_file(dir / feature_file(s), f);
  }
  corpus.enrollments.save_jsonl(dir / "enrollments.jsonl");
}

Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "corpus.json"))
    throw DataError("no corpus at " + dir.string() + " (corpus.json missing)");
  Corpus corpus;
  try {
    std::ifstream in(dir / "corpus.json");
    json meta = json::parse(in);
    corpus.config = corpus_config_from_json(meta.at("config"));
  } catch (const json::exception& e) {
    throw CorruptFileError("corpus.json: " + std::string(e.what()));
  }
  try {
    for (const auto& j : read_jsonl(dir / "speakers.jsonl")) {
      auto v = j.at("voice").get<std::vector<double>>();
      const std::size_t n = v.size();
      corpus.speakers.push_back({j.at("speaker_id").get<std::string>(), j.at("locale").get<std::string>(),
                                 j.at("age_group").get<std::string>(), Tensor({n}, std::move(v))});
    }
    std::map<Split, TensorFile> files;
    for (const auto& j : read_jsonl(dir / "manifest.jsonl")) {
      Utterance u;
      u.id = j.at("id").get<std::string>();
      u.speaker_id = j.at("speaker_id").get<std::string>();
      u.locale = j.at("locale").get<std::string>();
      u.age_group = j.at("age_group").get<std::string>();
      u.split = parse_split(j.at("split").get<std::string>());
      u.positive = j.at("polarity").get<std::string>() == "positive";
      if (!u.positive) u.negative_type = j.at("negative_type").get<std::string>();
      if (!j.at("span").is_null())
        u.span = std::make_pair(j.at("span")[0].get<std::size_t>(), j.at("span")[1].get<std::size_t>());
      if (!files.count(u.split)) files[u.split] = read_tensor_file(dir / j.at("feature_file").get<std::string>());
      const TensorFile& f = files[u.split];
      u.features = f.get(j.at("feature_key").get<std::string>());
      const Tensor& labels = f.get(j.at("label_key").get<std::string>());
      for (double v : labels.values()) u.labels.push_back(static_cast<int>(v));
      if (u.features.rank() != 2 || u.features.rows() != u.labels.size() ||
          u.features.rows() != j.at("frames").get<std::size_t>())
        throw CorruptFileError("features and labels of " + u.id + " disagree with the manifest");
      corpus.utterances.push_back(std::move(u));
    }
  } catch (const json::exception& e) {
    throw CorruptFileError(dir.string() + ": " + e.what());
  }
  corpus.enrollments = EnrollmentStore::load_jsonl(dir / "enrollments.jsonl");
  return corpus;
}

}  // namespace kws
