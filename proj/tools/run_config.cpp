// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "run_config.hpp"

#include <fstream>

#include "kws/errors.hpp"

namespace kws::cli {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

MissingEnrollment parse_missing(const std::string& s) {
  if (s == "skip") return MissingEnrollment::skip;
  if (s == "constant_vector") return MissingEnrollment::constant_vector;
  throw ConfigError("eval.missing_enrollment must be skip or constant_vector, got '" + s + "'");
}

std::string to_string(MissingEnrollment m) {
  return m == MissingEnrollment::skip ? "skip" : "constant_vector";
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void apply_eval(EvalSettings& e, const json& j) {
  reject_unknown(j, "eval", {"condition", "smooth_window", "missing_enrollment", "split", "checkpoint", "variant", "seed"});
  try {
    if (j.contains("condition")) e.condition = parse_condition(get<std::string>(j, "condition", "eval"));
    if (j.contains("split")) e.split = parse_split(get<std::string>(j, "split", "eval"));
  } catch (const DataError& err) {
    throw ConfigError(std::string("eval: ") + err.what());
  }
  if (j.contains("smooth_window")) e.smooth_window = get<std::size_t>(j, "smooth_window", "eval");
  if (e.smooth_window == 0) throw ConfigError("eval.smooth_window must be >= 1");
  if (j.contains("missing_enrollment")) e.missing_enrollment = parse_missing(get<std::string>(j, "missing_enrollment", "eval"));
  if (j.contains("checkpoint")) e.checkpoint = get<std::string>(j, "checkpoint", "eval");
  if (e.checkpoint != "final" && e.checkpoint != "best") throw ConfigError("eval.checkpoint must be final or best");
  if (j.contains("variant")) {
    if (j.at("variant").is_null()) e.variant.reset();
    else e.variant = parse_variant(get<std::string>(j, "variant", "eval"));
  }
  if (j.contains("seed")) {
    if (j.at("seed").is_null()) e.seed.reset();
    else e.seed = get<std::uint64_t>(j, "seed", "eval");
  }
}

}  // namespace

json to_json(const RunConfig& c) {
  json e = {{"condition", to_string(c.eval.condition)},
            {"smooth_window", c.eval.smooth_window},
            {"missing_enrollment", to_string(c.eval.missing_enrollment)},
            {"split", to_string(c.eval.split)},
            {"checkpoint", c.eval.checkpoint},
            {"variant", c.eval.variant ? json(to_string(*c.eval.variant)) : json(nullptr)},
            {"seed", c.eval.seed ? json(*c.eval.seed) : json(nullptr)}};
  json j = {{"corpus", corpus_config_to_json(c.corpus)},
            {"train", train_config_to_json(c.train)},
            {"eval", e},
            {"paths", {{"corpus", c.paths.corpus}, {"out", c.paths.out}, {"checkpoint", c.paths.checkpoint}}}};
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  return j;
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, "config", {"seed", "corpus", "train", "eval", "paths"});
  RunConfig c;
  if (j.contains("seed") && !j.at("seed").is_null()) c.seed = get<std::uint64_t>(j, "seed", "config");
  if (j.contains("corpus")) c.corpus = corpus_config_from_json(j.at("corpus"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("eval")) apply_eval(c.eval, j.at("eval"));
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    reject_unknown(p, "paths", {"corpus", "out", "checkpoint"});
    if (p.contains("corpus")) c.paths.corpus = get<std::string>(p, "corpus", "paths");
    if (p.contains("out")) c.paths.out = get<std::string>(p, "out", "paths");
    if (p.contains("checkpoint")) c.paths.checkpoint = get<std::string>(p, "checkpoint", "paths");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

RunConfig resolve(const std::optional<std::filesystem::path>& config, const Overrides& flags) {
  RunConfig c = config ? load_run_config(*config) : RunConfig{};
  if (flags.seed) c.seed = flags.seed;
  if (flags.out) c.paths.out = *flags.out;
  if (flags.corpus) c.paths.corpus = *flags.corpus;
  if (flags.checkpoint) c.paths.checkpoint = *flags.checkpoint;
  if (flags.variant) {
    c.train.variant = *flags.variant;
    c.eval.variant = flags.variant;
  }
  if (flags.robust_prob) c.train.robust_prob = *flags.robust_prob;
  if (flags.condition) c.eval.condition = *flags.condition;
  if (c.seed) {
    c.corpus.seed = *c.seed;
    c.train.seed = *c.seed;
    c.eval.seed = c.seed;
  }
  return c;
}

void write_snapshot(const RunConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  // the section seeds already carry the master seed, so the snapshot can be
  // fed back to any command unchanged
  RunConfig s = c;
  s.seed.reset();
  std::ofstream out(dir / "config.resolved.json");
  out << to_json(s).dump(2) << '\n';
  if (!out) throw DataError("cannot write " + (dir / "config.resolved.json").string());
}

}  // namespace kws::cli
