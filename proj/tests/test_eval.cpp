// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <fstream>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "kws/errors.hpp"
#include "kws/eval.hpp"
#include "test_util.hpp"

using namespace kws;

namespace {

// Enumerates every distinct score plus ±inf and counts directly.
EerResult brute_force_eer(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<double> ts(pos);
  ts.insert(ts.end(), neg.begin(), neg.end());
  ts.push_back(std::numeric_limits<double>::infinity());
  ts.push_back(-std::numeric_limits<double>::infinity());
  std::sort(ts.begin(), ts.end());
  EerResult best{0, 0, 0, 0};
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (i > 0 && ts[i] == ts[i - 1]) continue;
    std::size_t fa = 0, fr = 0;
    for (double s : neg) fa += s >= ts[i];
    for (double s : pos) fr += s < ts[i];
    const double far = static_cast<double>(fa) / static_cast<double>(neg.size());
    const double frr = static_cast<double>(fr) / static_cast<double>(pos.size());
    if (std::abs(far - frr) < gap) {
      gap = std::abs(far - frr);
      best = {(far + frr) / 2.0, ts[i], far, frr};
    }
  }
  return best;
}

ScoredUtterance su(std::string id, std::string loc, std::string age, bool pos, double score) {
  return {std::move(id), "spk-" + loc + age, std::move(loc), std::move(age), pos, score,
          Condition::with_embedding};
}

}  // namespace

TEST_CASE("utterance_score examples") {
  CHECK(utterance_score(Tensor({4, 2}), 3) == 0.0);
  CHECK(utterance_score(Tensor::matrix({{0.3, 0.7}}), 1) == 0.7);
  CHECK(utterance_score(Tensor::matrix({{1, 0}, {0, 1}, {0, 1}, {1, 0}}), 2) == 1.0);
  // window longer than the utterance averages what exists so far
  CHECK(utterance_score(Tensor::matrix({{0.5, 0.5}, {0, 1}}), 10) == 0.75);
  CHECK_THROWS_AS(utterance_score(Tensor::matrix({{0.5, 0.5}}), 0), ValidationError);
}

TEST_CASE("compute_eer hand cases") {
  CHECK(compute_eer(std::vector<double>{0.9, 0.8}, std::vector<double>{0.1, 0.2}).eer == 0.0);
  auto r = compute_eer(std::vector<double>{0.8, 0.4}, std::vector<double>{0.6, 0.2});
  CHECK(r.eer == 0.5);
  CHECK(r.threshold > 0.4);
  CHECK(r.threshold <= 0.6);
  std::vector<double> same{0.1, 0.5, 0.7, 0.9};
  CHECK(compute_eer(same, same).eer == 0.5);
  CHECK_THROWS_AS(compute_eer(std::vector<double>{}, same), ValidationError);
  CHECK_THROWS_AS(compute_eer(same, std::vector<double>{}), ValidationError);
}

TEST_CASE("compute_eer equals the brute-force oracle on random score sets") {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> pos(1 + rng.index(50)), neg(1 + rng.index(50));
    // coarse grid forces ties between and within the lists
    const bool coarse = trial % 2 == 0;
    for (double& v : pos) v = coarse ? static_cast<double>(rng.index(10)) / 10.0 : rng.uniform();
    for (double& v : neg) v = coarse ? static_cast<double>(rng.index(10)) / 10.0 : rng.uniform() * 0.8;
    const auto a = compute_eer(pos, neg), b = brute_force_eer(pos, neg);
    REQUIRE(a.eer == b.eer);
    REQUIRE(a.threshold == b.threshold);
  }
}

TEST_CASE("compute_eer: invariance and range") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> pos(1 + rng.index(30)), neg(1 + rng.index(30));
    for (double& v : pos) v = rng.uniform();
    for (double& v : neg) v = rng.uniform() * 0.9;
    auto t = [](std::vector<double> v) {
      for (double& x : v) x = std::exp(3.0 * x) - 2.0;
      return v;
    };
    const double e = compute_eer(pos, neg).eer;
    CHECK(e == compute_eer(t(pos), t(neg)).eer);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
    const bool separable = *std::min_element(pos.begin(), pos.end()) > *std::max_element(neg.begin(), neg.end());
    CHECK((e == 0.0) == separable);
  }
}

TEST_CASE("det_curve: monotone, framed, consistent with compute_eer") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> pos(1 + rng.index(40)), neg(1 + rng.index(40));
    for (double& v : pos) v = rng.uniform();
    for (double& v : neg) v = rng.uniform() * 0.7;
    auto curve = det_curve(pos, neg);
    CHECK(curve.front().far == 0.0);
    CHECK(curve.back().frr == 0.0);
    for (std::size_t i = 1; i < curve.size(); ++i) {
      CHECK(curve[i].threshold < curve[i - 1].threshold);
      CHECK(curve[i].far >= curve[i - 1].far);
      CHECK(curve[i].frr <= curve[i - 1].frr);
    }
    // crossing of the staircase brackets the EER within one step
    const double step = 1.0 / static_cast<double>(std::min(pos.size(), neg.size()));
    std::size_t cross = 0;
    while (cross < curve.size() && curve[cross].far < curve[cross].frr) ++cross;
    REQUIRE(cross < curve.size());
    const double e = compute_eer(pos, neg).eer;
    const double lo = std::min(curve[cross].far, cross ? curve[cross - 1].frr : 1.0);
    const double hi = std::max(curve[cross].far, cross ? curve[cross - 1].frr : 0.0);
    CHECK(e >= lo - step);
    CHECK(e <= hi + step);
  }
  auto sep = det_curve(std::vector<double>{0.9, 0.8}, std::vector<double>{0.1, 0.2});
  CHECK(std::any_of(sep.begin(), sep.end(), [](const DetPoint& p) { return p.far == 0.0 && p.frr == 0.0; }));
  CHECK_THROWS_AS(det_curve(std::vector<double>{}, std::vector<double>{0.1}), ValidationError);
}

TEST_CASE("probit") {
  CHECK(probit(0.5) == doctest::Approx(0.0));
  CHECK(probit(0.8413447460685429) == doctest::Approx(1.0));
  CHECK(std::isfinite(probit(0.0)));
  CHECK(std::isfinite(probit(1.0)));
}

TEST_CASE("stratified_report") {
  Rng rng(4);
  std::vector<ScoredUtterance> s;
  int id = 0;
  for (const char* loc : {"A", "B"})
    for (int i = 0; i < 20; ++i) {
      // cell A scores are noisier copies of B's distributions
      const double noise = std::string(loc) == "A" ? 0.45 : 0.1;
      s.push_back(su("u" + std::to_string(id++), loc, "adult", true, std::clamp(0.7 + noise * rng.normal(), 0.0, 1.0)));
      s.push_back(su("u" + std::to_string(id++), loc, "adult", false, std::clamp(0.3 + noise * rng.normal(), 0.0, 1.0)));
    }
  auto r = stratified_report(s);
  CHECK(r.find("A", "adult")->eer > r.find("B", "adult")->eer);

  // a single cell matches compute_eer on everything
  std::vector<ScoredUtterance> one(s.begin(), s.begin() + 40);
  auto r1 = stratified_report(one);
  std::vector<double> pos, neg;
  for (const auto& x : one) (x.positive ? pos : neg).push_back(x.score);
  CHECK(r1.overall.eer == compute_eer(pos, neg).eer);
  CHECK(r1.find("A", "adult")->eer == r1.overall.eer);

  auto self = stratified_report(s, &s, "itself");
  CHECK(*self.overall.relative == 0.0);
  for (const auto& g : self.groups)
    if (g.sufficient) CHECK(*g.relative == 0.0);
  CHECK(self.reference == "itself");

  // too few examples marks a cell insufficient instead of dropping it
  s.push_back(su("x1", "C", "child", true, 0.9));
  s.push_back(su("x2", "C", "child", false, 0.1));
  auto r2 = stratified_report(s);
  REQUIRE(r2.find("C", "child"));
  CHECK_FALSE(r2.find("C", "child")->sufficient);
  CHECK(r2.find("C", "child")->positives == 1);

  s.push_back(su("x3", "", "child", true, 0.5));
  CHECK_THROWS_AS(stratified_report(s), ValidationError);

  auto back = EvalReport::from_json(self.to_json());
  CHECK(back.to_json() == self.to_json());
  const std::string table = render_table({{"sys", self}});
  CHECK(table.find("Relative improvement") != std::string::npos);
  CHECK(render_table({{"sys", r}}).find("Relative improvement") == std::string::npos);
}

TEST_CASE("relative_improvement sign convention") {
  CHECK(relative_improvement(0.8, 1.0) == doctest::Approx(-0.2));
  CHECK(relative_improvement(0.0, 0.0) == 0.0);
  CHECK(std::isinf(relative_improvement(0.1, 0.0)));
}

TEST_CASE("scores and DET CSV files") {
  test::TempDir dir("scores");
  std::vector<ScoredUtterance> s{su("a", "A", "child", true, 0.123456789012345678),
                                 su("b", "B", "adult", false, 1.0 / 3.0)};
  s[1].condition = Condition::without_embedding;
  write_scores_csv(dir / "s.csv", s);
  auto back = read_scores_csv(dir / "s.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].score == s[0].score);
  CHECK(back[1].score == s[1].score);
  CHECK(back[1].condition == Condition::without_embedding);
  CHECK(back[0].locale == "A");

  write_det_csv(dir / "det.csv", det_curve(std::vector<double>{0.9}, std::vector<double>{0.1}));
  std::ifstream in(dir / "det.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "threshold,far,frr,probit_far,probit_frr");
}
