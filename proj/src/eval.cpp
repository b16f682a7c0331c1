// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kws/eval.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "kws/errors.hpp"

namespace kws {

double utterance_score(const Tensor& posteriors, std::size_t smooth_w) {
  if (posteriors.rank() != 2 || posteriors.rows() == 0 || posteriors.cols() < 2)
    throw DimensionError("utterance_score: posteriors must be [F×C] with F >= 1, C >= 2");
  if (smooth_w == 0) throw ValidationError("utterance_score: smoothing window must be >= 1");
  double best = 0.0, window = 0.0;
  for (std::size_t f = 0; f < posteriors.rows(); ++f) {
    window += posteriors.at(f, 1);
    if (f >= smooth_w) window -= posteriors.at(f - smooth_w, 1);
    const std::size_t n = std::min(f + 1, smooth_w);
    best = std::max(best, window / static_cast<double>(n));
  }
  return best;
}

namespace {

void require_scores(std::span<const double> positives, std::span<const double> negatives,
                    const char* who) {
  if (positives.empty() || negatives.empty())
    throw ValidationError(std::string(who) + ": needs at least one positive and one negative score (got " +
                          std::to_string(positives.size()) + " positives, " +
                          std::to_string(negatives.size()) + " negatives)");
  for (auto s : {positives, negatives})
    for (double v : s)
      if (std::isnan(v)) throw ValidationError(std::string(who) + ": NaN score");
}

// Ascending distinct scores framed by -inf and +inf.
std::vector<double> thresholds(std::span<const double> a, std::span<const double> b) {
  std::vector<double> t(a.begin(), a.end());
  t.insert(t.end(), b.begin(), b.end());
  t.push_back(-std::numeric_limits<double>::infinity());
  t.push_back(std::numeric_limits<double>::infinity());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

// FAR and FRR at every threshold of `ts` (ascending), by merging sorted lists.
template <class F>
void sweep(std::span<const double> positives, std::span<const double> negatives,
           const std::vector<double>& ts, F&& visit) {
  std::vector<double> pos(positives.begin(), positives.end()), neg(negatives.begin(), negatives.end());
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  std::size_t pos_below = 0, neg_below = 0;
  for (double t : ts) {
    while (pos_below < pos.size() && pos[pos_below] < t) ++pos_below;
    while (neg_below < neg.size() && neg[neg_below] < t) ++neg_below;
    visit(t, static_cast<double>(neg.size() - neg_below) / nn, static_cast<double>(pos_below) / np);
  }
}

}  // namespace

EerResult compute_eer(std::span<const double> positives, std::span<const double> negatives) {
  require_scores(positives, negatives, "compute_eer");
  EerResult best{0, 0, 0, 0};
  double best_gap = std::numeric_limits<double>::infinity();
  sweep(positives, negatives, thresholds(positives, negatives), [&](double t, double far, double frr) {
    const double gap = std::abs(far - frr);
    if (gap < best_gap) {
      best_gap = gap;
      best = {(far + frr) / 2.0, t, far, frr};
    }
  });
  return best;
}

std::vector<DetPoint> det_curve(std::span<const double> positives, std::span<const double> negatives) {
  require_scores(positives, negatives, "det_curve");
  std::vector<DetPoint> out;
  sweep(positives, negatives, thresholds(positives, negatives),
        [&](double t, double far, double frr) { out.push_back({t, far, frr}); });
  std::reverse(out.begin(), out.end());
  return out;
}

double probit(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, std::clamp(p, 1e-6, 1.0 - 1e-6));
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_det_csv(const std::filesystem::path& path, const std::vector<DetPoint>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "threshold,far,frr,probit_far,probit_frr\n";
  for (const auto& p : curve)
    out << fmt(p.threshold) << ',' << fmt(p.far) << ',' << fmt(p.frr) << ',' << fmt(probit(p.far))
        << ',' << fmt(probit(p.frr)) << '\n';
}

std::string to_string(Condition c) {
  return c == Condition::with_embedding ? "with" : "without";
}

Condition parse_condition(std::string_view s) {
  if (s == "with" || s == "with_embedding") return Condition::with_embedding;
  if (s == "without" || s == "without_embedding") return Condition::without_embedding;
  throw ConfigError("unknown condition '" + std::string(s) + "' (expected with|without)");
}

double relative_improvement(double sys, double ref) {
  if (ref == 0.0) return sys == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return (sys - ref) / ref;
}

// ---------------------------------------------------------------- reports

const GroupResult* EvalReport::find(const std::string& locale, const std::string& age_group) const {
  if (locale == "all" && age_group == "all") return &overall;
  for (const auto& g : groups)
    if (g.locale == locale && g.age_group == age_group) return &g;
  return nullptr;
}

namespace {

using json = nlohmann::json;

json group_json(const GroupResult& g) {
  json j = {{"locale", g.locale},
            {"age_group", g.age_group},
            {"positives", g.positives},
            {"negatives", g.negatives},
            {"sufficient", g.sufficient},
            {"eer", g.sufficient ? json(g.eer) : json()}};
  j["relative_improvement"] = g.relative ? json(*g.relative) : json();
  return j;
}

GroupResult group_from_json(const json& j) {
  GroupResult g;
  g.locale = j.at("locale").get<std::string>();
  g.age_group = j.at("age_group").get<std::string>();
  g.positives = j.at("positives").get<std::size_t>();
  g.negatives = j.at("negatives").get<std::size_t>();
  g.sufficient = j.at("sufficient").get<bool>();
  if (!j.at("eer").is_null()) g.eer = j.at("eer").get<double>();
  if (j.contains("relative_improvement") && !j.at("relative_improvement").is_null())
    g.relative = j.at("relative_improvement").get<double>();
  return g;
}

GroupResult evaluate_group(const std::vector<const ScoredUtterance*>& members, std::string locale,
                           std::string age) {
  GroupResult g;
  g.locale = std::move(locale);
  g.age_group = std::move(age);
  std::vector<double> pos, neg;
  for (const auto* s : members) (s->positive ? pos : neg).push_back(s->score);
  g.positives = pos.size();
  g.negatives = neg.size();
  g.sufficient = pos.size() >= kMinCellCount && neg.size() >= kMinCellCount;
  if (g.sufficient) g.eer = compute_eer(pos, neg).eer;
  return g;
}

}  // namespace

json EvalReport::to_json() const {
  json gs = json::array();
  for (const auto& g : groups) gs.push_back(group_json(g));
  return {{"overall", group_json(overall)},
          {"groups", gs},
          {"reference", reference ? json(*reference) : json()}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  try {
    r.overall = group_from_json(j.at("overall"));
    for (const auto& g : j.at("groups")) r.groups.push_back(group_from_json(g));
    if (!j.at("reference").is_null()) r.reference = j.at("reference").get<std::string>();
  } catch (const json::exception& e) {
    throw CorruptFileError(std::string("report: ") + e.what());
  }
  return r;
}

EvalReport stratified_report(const std::vector<ScoredUtterance>& scored,
                             const std::vector<ScoredUtterance>* reference,
                             const std::string& reference_name) {
  std::vector<const ScoredUtterance*> all;
  std::map<std::string, std::vector<const ScoredUtterance*>> by_locale, by_age;
  std::map<std::pair<std::string, std::string>, std::vector<const ScoredUtterance*>> by_cell;
  for (const auto& s : scored) {
    if (s.locale.empty() || s.age_group.empty())
      throw ValidationError("stratified_report: utterance " + s.utterance_id + " lacks a group label");
    if (!std::isfinite(s.score) || s.score < 0.0 || s.score > 1.0)
      throw ValidationError("stratified_report: score of " + s.utterance_id + " is outside [0, 1]");
    all.push_back(&s);
    by_locale[s.locale].push_back(&s);
    by_age[s.age_group].push_back(&s);
    by_cell[{s.locale, s.age_group}].push_back(&s);
  }
  EvalReport r;
  {
    std::vector<double> pos, neg;
    for (const auto* s : all) (s->positive ? pos : neg).push_back(s->score);
    require_scores(pos, neg, "stratified_report");
    r.overall = evaluate_group(all, "all", "all");
    r.overall.eer = compute_eer(pos, neg).eer;
  }
  for (const auto& [loc, m] : by_locale) r.groups.push_back(evaluate_group(m, loc, "all"));
  for (const auto& [age, m] : by_age) r.groups.push_back(evaluate_group(m, "all", age));
  for (const auto& [cell, m] : by_cell) r.groups.push_back(evaluate_group(m, cell.first, cell.second));
  if (reference) return compare_reports(std::move(r), stratified_report(*reference), reference_name);
  return r;
}

EvalReport compare_reports(EvalReport sys, const EvalReport& ref, const std::string& reference_name) {
  sys.reference = reference_name;
  auto fill = [&](GroupResult& g) {
    const GroupResult* other = ref.find(g.locale, g.age_group);
    if (other && g.sufficient && other->sufficient) g.relative = relative_improvement(g.eer, other->eer);
    else g.relative.reset();
  };
  // the overall EER exists whenever both sides have scores at all
  sys.overall.relative = relative_improvement(sys.overall.eer, ref.overall.eer);
  for (auto& g : sys.groups) fill(g);
  return sys;
}

std::string render_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::set<std::string> locales;
  std::set<std::string> ages;
  for (const auto& [_, r] : rows)
    for (const auto& g : r.groups) {
      if (g.locale != "all") locales.insert(g.locale);
      if (g.age_group != "all" && g.age_group != "adult") ages.insert(g.age_group);
    }
  std::vector<std::string> cols{"all"};
  cols.insert(cols.end(), locales.begin(), locales.end());
  std::vector<std::string> sub{"all"};
  sub.insert(sub.end(), ages.begin(), ages.end());

  std::size_t name_w = 12;
  for (const auto& [name, r] : rows) {
    name_w = std::max(name_w, name.size());
    if (r.reference) name_w = std::max(name_w, name.size() + 4 + r.reference->size());
  }
  constexpr int cell_w = 9;
  std::ostringstream out;
  char buf[64];
  auto pad = [&](const std::string& s, std::size_t w) { out << s << std::string(w > s.size() ? w - s.size() : 0, ' '); };

  pad("EER (%)", name_w);
  for (const auto& c : cols) {
    out << " | ";
    pad(c == "all" ? "all locales" : "locale " + c, sub.size() * cell_w + (sub.size() - 1));
  }
  out << '\n';
  pad("", name_w);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out << " |";
    for (const auto& a : sub) {
      out << ' ';
      pad(a == "all" ? "all ages" : a, cell_w);
    }
  }
  out << '\n' << std::string(name_w + cols.size() * (3 + sub.size() * (cell_w + 1)), '-') << '\n';

  auto cell_text = [&](const GroupResult* g, bool relative) -> std::string {
    if (!g || !g->sufficient) return "n/a";
    if (!relative) {
      std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * g->eer);
      return buf;
    }
    if (!g->relative) return "n/a";
    if (std::isinf(*g->relative)) return "+inf";
    std::snprintf(buf, sizeof buf, "%+.1f%%", 100.0 * *g->relative);
    return buf;
  };
  auto emit = [&](const std::string& name, const EvalReport& r, bool relative) {
    pad(name, name_w);
    for (const auto& c : cols) {
      out << " |";
      for (const auto& a : sub) {
        out << ' ';
        pad(cell_text(r.find(c, a), relative), cell_w);
      }
    }
    out << '\n';
  };
  for (const auto& [name, r] : rows) emit(name, r, false);
  bool any = false;
  for (const auto& [_, r] : rows) any |= r.reference.has_value();
  if (any) {
    out << "Relative improvement (%)\n";
    for (const auto& [name, r] : rows)
      if (r.reference) emit(name + " vs " + *r.reference, r, true);
  }
  return out.str();
}

// ---------------------------------------------------------------- scores files

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoredUtterance>& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "utterance_id,speaker_id,locale,age_group,polarity,condition,score\n";
  for (const auto& u : s)
    out << u.utterance_id << ',' << u.speaker_id << ',' << u.locale << ',' << u.age_group << ','
        << (u.positive ? "positive" : "negative") << ',' << to_string(u.condition) << ','
        << fmt(u.score) << '\n';
}

std::vector<ScoredUtterance> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "utterance_id,speaker_id,locale,age_group,polarity,condition,score")
    throw CorruptFileError(path.string() + ": unexpected header");
  std::vector<ScoredUtterance> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string part; std::getline(ss, part, ',');) f.push_back(part);
    if (f.size() != 7) throw CorruptFileError(path.string() + ": bad row '" + line + "'");
    ScoredUtterance u{f[0], f[1], f[2], f[3], f[4] == "positive", std::stod(f[6]), parse_condition(f[5])};
    out.push_back(std::move(u));
  }
  return out;
}

// ---------------------------------------------------------------- scoring

std::optional<Tensor> scoring_embedding(const KwsModel& m, const Corpus& corpus, const Utterance& u,
                                        const ScoringOptions& opt) {
  if (!m.config.conditioned()) return std::nullopt;
  const std::size_t e = *m.config.film_embedding_dim;
  if (opt.condition == Condition::without_embedding) return constant_vector(e).values;
  const auto dim = variant_embedding_dim(opt.variant);
  if (!dim)
    throw ConfigError("conditioned checkpoint evaluated with variant baseline; pass the variant it was trained with");
  if (*dim != e)
    throw ConfigError("variant " + to_string(opt.variant) + " produces " + std::to_string(*dim) +
                      "-dim embeddings but the checkpoint expects " + std::to_string(e));
  Rng rng(sub_seed(opt.pair_seed, "enroll", u.id));
  const EmbeddingSimulator sim = corpus.simulator();
  return pair_enrollment({u.id, &corpus.speaker(u.speaker_id)}, corpus.enrollments, sim, opt.variant, rng)->values;
}

ScoringResult score_split(const KwsModel& m, const Corpus& corpus, Split split, const ScoringOptions& opt) {
  const auto utts = corpus.split(split);
  ScoringResult result;
  std::vector<const Utterance*> kept;
  std::vector<std::optional<Tensor>> embeddings;
  for (const auto* u : utts) {
    try {
      embeddings.push_back(scoring_embedding(m, corpus, *u, opt));
    } catch (const NoEnrollmentError&) {
      if (opt.missing == MissingEnrollment::skip) {
        ++result.skipped;
        continue;
      }
      ++result.fallbacks;
      embeddings.push_back(constant_vector(*m.config.film_embedding_dim).values);
    }
    kept.push_back(u);
  }
  result.scored.resize(kept.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < kept.size(); ++i) {
    try {
      const Utterance& u = *kept[i];
      const double s = utterance_score(forward_posteriors(m, u.features, embeddings[i]), opt.smooth_window);
      result.scored[i] = {u.id, u.speaker_id, u.locale, u.age_group, u.positive, s, opt.condition};
    } catch (...) {
#pragma omp critical
      error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return result;
}

}  // namespace kws
