// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kws/data.hpp"
#include "kws/model.hpp"
#include "kws/speaker.hpp"

namespace kws {

/// Max over frames of the trailing moving average (window w, shorter at the
/// start) of the keyword-class posterior, column 1 of posteriors[F×C].
double utterance_score(const Tensor& posteriors, std::size_t smooth_w);

struct EerResult {
  double eer;
  double threshold;
  double far;
  double frr;
};

/// Thresholds are every score plus ±inf; FAR(t) = share of negatives >= t,
/// FRR(t) = share of positives < t. The EER is (FAR+FRR)/2 at the threshold
/// that minimizes |FAR-FRR|, the lowest such threshold on ties.
EerResult compute_eer(std::span<const double> positives, std::span<const double> negatives);

struct DetPoint {
  double threshold;
  double far;
  double frr;
};

/// One point per distinct threshold in decreasing threshold order, framed by
/// +inf (FAR 0) and -inf (FRR 0).
std::vector<DetPoint> det_curve(std::span<const double> positives, std::span<const double> negatives);
/// Inverse standard normal CDF, probabilities clipped to [1e-6, 1 - 1e-6].
double probit(double p);
/// Columns threshold,far,frr,probit_far,probit_frr.
void write_det_csv(const std::filesystem::path& path, const std::vector<DetPoint>& curve);

enum class Condition { with_embedding, without_embedding };
std::string to_string(Condition c);
/// Accepts with|without (and the long forms).
Condition parse_condition(std::string_view s);

struct ScoredUtterance {
  std::string utterance_id;
  std::string speaker_id;
  std::string locale;
  std::string age_group;
  bool positive = false;
  double score = 0.0;
  Condition condition = Condition::with_embedding;
};

/// (sys - ref) / ref; negative is better. 0 when both are 0.
double relative_improvement(double sys, double ref);

inline constexpr std::size_t kMinCellCount = 5;

struct GroupResult {
  std::string locale;     // "all" for every locale
  std::string age_group;  // "all" for every age
  std::size_t positives = 0;
  std::size_t negatives = 0;
  bool sufficient = false;
  double eer = 0.0;
  std::optional<double> relative;
};

struct EvalReport {
  GroupResult overall;
  std::vector<GroupResult> groups;  // per locale, per age, per cell
  std::optional<std::string> reference;

  const GroupResult* find(const std::string& locale, const std::string& age_group) const;
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// EER overall, per locale, per age group and per (locale, age) cell. Groups
/// with fewer than 5 positives or negatives are marked insufficient. When a
/// reference is given, relative improvements are filled in for groups that
/// are sufficient in both.
EvalReport stratified_report(const std::vector<ScoredUtterance>& scored,
                             const std::vector<ScoredUtterance>* reference = nullptr,
                             const std::string& reference_name = "reference");
/// Relative improvements of `sys` against `ref`, group by group.
EvalReport compare_reports(EvalReport sys, const EvalReport& ref, const std::string& reference_name);

/// Comparison grid: one row per system, columns "all locales" then each
/// locale, each split into all ages / child; followed by relative
/// improvement rows when present.
std::string render_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoredUtterance>& s);
std::vector<ScoredUtterance> read_scores_csv(const std::filesystem::path& path);

enum class MissingEnrollment { skip, constant_vector };

struct ScoringOptions {
  Variant variant = Variant::baseline;
  Condition condition = Condition::with_embedding;
  std::size_t smooth_window = 10;
  /// Seeds the cross-enrollment pick, per utterance.
  std::uint64_t pair_seed = 1;
  MissingEnrollment missing = MissingEnrollment::constant_vector;
};

struct ScoringResult {
  std::vector<ScoredUtterance> scored;
  std::size_t skipped = 0;
  std::size_t fallbacks = 0;
};

/// Embedding used to score one utterance (nullopt for a baseline model).
/// Throws NoEnrollmentError for cross variants without enrollment.
std::optional<Tensor> scoring_embedding(const KwsModel& m, const Corpus& corpus, const Utterance& u,
                                        const ScoringOptions& opt);

/// Scores every utterance of a split; parallel over utterances.
ScoringResult score_split(const KwsModel& m, const Corpus& corpus, Split split,
                          const ScoringOptions& opt);

}  // namespace kws
