// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end checks of the kws binary. Commands run through the shell, so
// these also pin the exit-code classes.

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "kws/checkpoint.hpp"
#include "kws/eval.hpp"
#include "kws/frontend.hpp"
#include "test_util.hpp"

using namespace kws;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome kws_run(const test::TempDir& d, const std::string& args, const std::string& env = "") {
  const fs::path o = d / "stdout.txt", e = d / "stderr.txt";
  const std::string cmd = env + " '" + std::string(KWS_BIN) + "' " + args + " >'" + o.string() + "' 2>'" +
                          e.string() + "'";
  const int status = std::system(cmd.c_str());
  Outcome r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& f : fs::recursive_directory_iterator(root))
    if (f.is_regular_file()) files[fs::relative(f.path(), root).string()] = slurp(f.path());
  return files;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// Short training so the whole file runs in seconds.
constexpr const char* kQuick = R"({"train": {"steps": 40, "eval_every": 20}})";

std::string q(const fs::path& p) {
  return "'" + p.string() + "'";
}

// One shared corpus for the tests that only read it.
const fs::path& shared_corpus() {
  static test::TempDir dir("cli-corpus");
  static const bool made = [] {
    const std::string cmd = std::string("'") + KWS_BIN + "' gen-data --seed 11 --out '" + (dir / "c").string() +
                            "' >/dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  }();
  REQUIRE(made);
  static const fs::path p = dir / "c";
  return p;
}

}  // namespace

TEST_CASE("gen-data: same seed gives identical trees, summary lists cells") {
  test::TempDir d("cli-gen");
  const Outcome a = kws_run(d, "gen-data --seed 7 --out " + q(d / "a"));
  REQUIRE(a.code == 0);
  CHECK(a.out.find("B/child") != std::string::npos);
  CHECK(a.out.find("enrollments") != std::string::npos);
  CHECK(fs::exists(d / "a" / "corpus.json"));
  REQUIRE(kws_run(d, "gen-data --seed 7 --out " + q(d / "b")).code == 0);
  CHECK(tree(d / "a") == tree(d / "b"));
  REQUIRE(kws_run(d, "gen-data --seed 8 --out " + q(d / "c")).code == 0);
  CHECK(tree(d / "a") != tree(d / "c"));
}

TEST_CASE("exit codes by error class") {
  test::TempDir d("cli-exit");
  write_file(d / "cell.json", R"({"corpus": {"cells": [{"locale": "A", "age_group": "adult", "speakers": 1},
                                                       {"locale": "B", "age_group": "child", "speakers": 20}]}})");
  const Outcome cell = kws_run(d, "gen-data --config " + q(d / "cell.json") + " --out " + q(d / "x"));
  CHECK(cell.code == 2);
  CHECK(cell.err.find("A/adult") != std::string::npos);

  write_file(d / "unknown.json", R"({"train": {"stepz": 3}})");
  CHECK(kws_run(d, "gen-data --config " + q(d / "unknown.json") + " --out " + q(d / "x")).code == 2);
  write_file(d / "broken.json", "{");
  CHECK(kws_run(d, "gen-data --config " + q(d / "broken.json") + " --out " + q(d / "x")).code == 2);
  CHECK(kws_run(d, "train --variant nonsense --corpus x --out y").code == 2);
  CHECK(kws_run(d, "frobnicate").code == 2);
  CHECK(kws_run(d, "selftest", "KWS_LOG_LEVEL=chatty").code == 2);
  CHECK(kws_run(d, "train --corpus " + q(d / "missing") + " --out " + q(d / "y")).code == 3);
  CHECK(kws_run(d, "eval --checkpoint " + q(d / "none.kwt") + " --corpus " + q(shared_corpus()) + " --out " +
                       q(d / "y"))
            .code == 3);
}

TEST_CASE("train, eval and report") {
  test::TempDir d("cli-pipeline");
  const fs::path corpus = shared_corpus();
  write_file(d / "quick.json", kQuick);
  const std::string cfg = " --config " + q(d / "quick.json") + " --corpus " + q(corpus);

  REQUIRE(kws_run(d, "train" + cfg + " --seed 3 --variant baseline --out " + q(d / "base")).code == 0);
  REQUIRE(kws_run(d, "train" + cfg + " --seed 3 --variant td_cross --robust-prob 0.5 --out " + q(d / "td")).code ==
          0);
  CheckpointInfo info;
  CHECK_FALSE(load_model(d / "base" / "final.kwt", &info).config.conditioned());
  CHECK(load_model(d / "td" / "final.kwt", &info).config.conditioned());
  CHECK(info.extra.at("variant") == "td_cross");
  CHECK(slurp(d / "td" / "metrics.csv").size() > 100);
  CHECK(fs::exists(d / "td" / "config.resolved.json"));

  SUBCASE("eval writes scores, DET and report; baseline ignores the condition") {
    REQUIRE(kws_run(d, "eval --checkpoint " + q(d / "base") + " --corpus " + q(corpus) + " --out " + q(d / "ew"))
                .code == 0);
    REQUIRE(kws_run(d, "eval --checkpoint " + q(d / "base") + " --corpus " + q(corpus) +
                           " --condition without --out " + q(d / "eo"))
                .code == 0);
    for (const char* f : {"scores.csv", "det.csv", "report.json", "report.txt", "config.resolved.json"})
      CHECK(fs::exists(d / "ew" / f));
    const json w = json::parse(slurp(d / "ew" / "report.json"));
    const json o = json::parse(slurp(d / "eo" / "report.json"));
    CHECK(w.at("report") == o.at("report"));
    CHECK(w.at("meta").at("condition") == "with");
    CHECK(o.at("meta").at("condition") == "without");
  }

  SUBCASE("report: single run, self comparison, corpus mismatch") {
    REQUIRE(kws_run(d, "eval --checkpoint " + q(d / "base") + " --corpus " + q(corpus) + " --out " + q(d / "eb"))
                .code == 0);
    REQUIRE(kws_run(d, "eval --checkpoint " + q(d / "td") + " --corpus " + q(corpus) + " --out " + q(d / "et"))
                .code == 0);
    const Outcome single = kws_run(d, "report " + q(d / "et"));
    REQUIRE(single.code == 0);
    CHECK(single.out.find("Relative improvement") == std::string::npos);

    const Outcome both = kws_run(d, "report " + q(d / "eb") + " " + q(d / "et") + " --out " + q(d / "rep"));
    REQUIRE(both.code == 0);
    CHECK(both.out.find("td_cross robust with vs baseline with") != std::string::npos);
    CHECK(fs::exists(d / "rep" / "report.json"));

    const Outcome self = kws_run(d, "report " + q(d / "et") + " --baseline " + q(d / "et"));
    REQUIRE(self.code == 0);
    const json merged_self = [&] {
      REQUIRE(kws_run(d, "report " + q(d / "et") + " --baseline " + q(d / "et") + " --out " + q(d / "rs")).code == 0);
      return json::parse(slurp(d / "rs" / "report.json"));
    }();
    CHECK(merged_self.at("runs").size() == 1);

    // a second copy of the same run: every relative improvement is zero
    fs::copy(d / "et", d / "et2");
    REQUIRE(kws_run(d, "report " + q(d / "et") + " " + q(d / "et2") + " --baseline " + q(d / "et") + " --out " +
                           q(d / "rz"))
                .code == 0);
    const EvalReport z = EvalReport::from_json(json::parse(slurp(d / "rz" / "report.json")).at("runs")[1].at("report"));
    REQUIRE(z.overall.relative.has_value());
    CHECK(*z.overall.relative == 0.0);
    for (const auto& g : z.groups) CHECK(g.relative.value_or(0.0) == 0.0);

    json other = json::parse(slurp(d / "et2" / "report.json"));
    other["meta"]["corpus_id"] = "0000000000000000";
    write_file(d / "et2" / "report.json", other.dump());
    const Outcome mismatch = kws_run(d, "report " + q(d / "et") + " " + q(d / "et2"));
    CHECK(mismatch.code == 3);
    CHECK(mismatch.err.find("different corpora") != std::string::npos);
  }

  SUBCASE("stream-infer reproduces eval scores") {
    REQUIRE(kws_run(d, "eval --checkpoint " + q(d / "td") + " --corpus " + q(corpus) + " --out " + q(d / "et"))
                .code == 0);
    REQUIRE(kws_run(d, "eval --checkpoint " + q(d / "td") + " --corpus " + q(corpus) +
                           " --condition without --out " + q(d / "eto"))
                .code == 0);
    const auto with = read_scores_csv(d / "et" / "scores.csv");
    const auto without = read_scores_csv(d / "eto" / "scores.csv");
    REQUIRE(with.size() == without.size());
    for (std::size_t i : {std::size_t{0}, with.size() / 2, with.size() - 1}) {
      for (const auto* rows : {&with, &without}) {
        const ScoredUtterance& s = (*rows)[i];
        const std::string cond = rows == &with ? "with" : "without";
        const Outcome r = kws_run(d, "stream-infer --checkpoint " + q(d / "td") + " --corpus " + q(corpus) +
                                         " --utterance " + s.utterance_id + " --condition " + cond);
        REQUIRE(r.code == 0);
        const auto at = r.out.rfind("score ");
        REQUIRE(at != std::string::npos);
        CHECK(std::abs(std::stod(r.out.substr(at + 6)) - s.score) <= 1e-6);
        CHECK(kws_run(d, "stream-infer --checkpoint " + q(d / "td") + " --corpus " + q(corpus) + " --utterance " +
                             s.utterance_id + " --condition " + cond)
                  .out == r.out);
      }
    }
  }

  SUBCASE("stream-infer on a wav file, conditioned model without reference warns") {
    std::vector<double> tone(16000);
    for (std::size_t i = 0; i < tone.size(); ++i) tone[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 1000.0 * double(i) / 16000.0);
    write_wav(d / "tone.wav", tone);
    const Outcome r = kws_run(d, "stream-infer --checkpoint " + q(d / "td") + " --wav " + q(d / "tone.wav"));
    REQUIRE(r.code == 0);
    CHECK(r.err.find("constant vector") != std::string::npos);
    std::istringstream lines(r.out);
    std::string line;
    std::size_t frames = 0;
    while (std::getline(lines, line) && line.rfind("score", 0) != 0) ++frames;
    CHECK(frames == 98);
    CHECK(line.rfind("score ", 0) == 0);
  }
}

TEST_CASE("empty eval split is a data error") {
  test::TempDir d("cli-empty");
  write_file(d / "noeval.json", R"({"corpus": {"split_fractions": [0.8, 0.2, 0.0]}})");
  write_file(d / "quick.json", kQuick);
  REQUIRE(kws_run(d, "gen-data --config " + q(d / "noeval.json") + " --out " + q(d / "c")).code == 0);
  REQUIRE(kws_run(d, "train --config " + q(d / "quick.json") + " --corpus " + q(d / "c") + " --out " + q(d / "t"))
              .code == 0);
  const Outcome r = kws_run(d, "eval --checkpoint " + q(d / "t") + " --corpus " + q(d / "c") + " --out " + q(d / "e"));
  CHECK(r.code == 3);
  CHECK(r.err.find("empty") != std::string::npos);
}

TEST_CASE("pipeline determinism and resume") {
  test::TempDir d("cli-determinism");
  write_file(d / "quick.json", kQuick);
  // both runs use the same paths, since the config snapshots record them
  for (const char* run : {"r1", "r2"}) {
    const fs::path root = d / "run";
    REQUIRE(kws_run(d, "gen-data --seed 5 --out " + q(root / "corpus")).code == 0);
    REQUIRE(kws_run(d, "train --config " + q(d / "quick.json") + " --seed 5 --variant ti_self --corpus " +
                           q(root / "corpus") + " --out " + q(root / "train"))
                .code == 0);
    REQUIRE(kws_run(d, "eval --checkpoint " + q(root / "train") + " --corpus " + q(root / "corpus") + " --out " +
                           q(root / "eval"))
                .code == 0);
    fs::rename(root, d / run);
  }
  CHECK(tree(d / "r1" / "corpus") == tree(d / "r2" / "corpus"));
  CHECK(tree(d / "r1" / "eval") == tree(d / "r2" / "eval"));
  for (const char* f : {"final.kwt", "best.kwt", "state.kwt", "config.resolved.json"})
    CHECK(slurp(d / "r1" / "train" / f) == slurp(d / "r2" / "train" / f));

  // stop part way, resume, and land on the same bytes
  const std::string train = "train --config " + q(d / "quick.json") + " --seed 5 --variant ti_self --corpus " +
                            q(d / "r1" / "corpus") + " --out " + q(d / "resumed");
  REQUIRE(kws_run(d, train + " --stop-after 27").code == 0);
  CHECK_FALSE(fs::exists(d / "resumed" / "final.kwt"));
  REQUIRE(kws_run(d, train + " --resume").code == 0);
  CHECK(slurp(d / "resumed" / "final.kwt") == slurp(d / "r1" / "train" / "final.kwt"));
  CHECK(slurp(d / "resumed" / "best.kwt") == slurp(d / "r1" / "train" / "best.kwt"));
}

TEST_CASE("selftest passes") {
  test::TempDir d("cli-selftest");
  const Outcome r = kws_run(d, "selftest");
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("PASS streaming") != std::string::npos);
}
