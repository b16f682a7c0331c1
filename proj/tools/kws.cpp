// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

// kws: command-line driver for corpus generation, training, evaluation,
// streaming inference and report assembly.
//
// Exit codes: 0 success, 1 failed selftest, 2 configuration or usage error,
// 3 data error (missing/corrupt files, empty splits, mismatched corpora),
// 4 runtime error.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "kws/checkpoint.hpp"
#include "kws/errors.hpp"
#include "kws/frontend.hpp"
#include "kws/selftest.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace kws;
using namespace kws::cli;

namespace {

constexpr int kExitSelftest = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

void setup_logging() {
  auto logger = spdlog::stderr_logger_st("kws");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("KWS_LOG_LEVEL");
  const std::string level = env ? env : "info";
  static const std::map<std::string, spdlog::level::level_enum> levels{
      {"error", spdlog::level::err}, {"warn", spdlog::level::warn},
      {"info", spdlog::level::info}, {"debug", spdlog::level::debug}};
  auto it = levels.find(level);
  if (it == levels.end())
    throw ConfigError("KWS_LOG_LEVEL must be one of error, warn, info, debug (got '" + level + "')");
  spdlog::set_level(it->second);
}

std::string require(const std::string& value, const char* what) {
  if (value.empty()) throw ConfigError(std::string(what) + " is required");
  return value;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CorruptFileError(path.string() + ": " + e.what());
  }
}

// A run directory stands for its final (or best) checkpoint.
fs::path checkpoint_file(const RunConfig& c) {
  const fs::path p = require(c.paths.checkpoint, "--checkpoint");
  return fs::is_directory(p) ? p / (c.eval.checkpoint + ".kwt") : p;
}

Variant checkpoint_variant(const RunConfig& c, const KwsModel& m, const CheckpointInfo& info) {
  if (c.eval.variant) return *c.eval.variant;
  if (info.extra.contains("variant")) return parse_variant(info.extra.at("variant").get<std::string>());
  if (m.config.conditioned())
    throw ConfigError("checkpoint does not record its variant; pass --variant");
  return Variant::baseline;
}

// Scoring options shared by eval and stream-infer, so both pair the same
// enrollment with a given utterance.
ScoringOptions scoring_options(RunConfig& c, Variant variant, const CheckpointInfo& info) {
  if (!c.eval.seed) c.eval.seed = info.seed;
  ScoringOptions o;
  o.variant = variant;
  o.condition = c.eval.condition;
  o.smooth_window = c.eval.smooth_window;
  o.pair_seed = sub_seed(*c.eval.seed, "eval-pairing");
  o.missing = c.eval.missing_enrollment;
  return o;
}

std::string run_label(Variant v, double robust_prob, Condition cond) {
  std::string s = to_string(v);
  if (robust_prob > 0.0) s += " robust";
  return s + " " + to_string(cond);
}

// ------------------------------------------------------------------ gen-data

int cmd_gen_data(RunConfig c) {
  const fs::path out = require(c.paths.out, "--out");
  c.corpus.validate();
  const Corpus corpus = generate_corpus(c.corpus);
  write_corpus(corpus, out);
  c.paths.out.clear();
  write_snapshot(c, out);

  std::printf("corpus %s (seed %llu) written to %s\n", corpus.corpus_id().c_str(),
              static_cast<unsigned long long>(c.corpus.seed), out.string().c_str());
  std::map<std::string, std::map<Split, std::size_t>> cells;
  std::map<std::string, Split> speaker_split;
  for (const auto& u : corpus.utterances) speaker_split[u.speaker_id] = u.split;
  for (const auto& s : corpus.speakers) ++cells[s.locale + "/" + s.age_group][speaker_split[s.speaker_id]];
  std::printf("%-12s %8s %6s %6s %6s\n", "cell", "speakers", "train", "dev", "eval");
  for (const auto& [name, n] : cells) {
    auto at = [&n](Split s) { auto it = n.find(s); return it == n.end() ? std::size_t{0} : it->second; };
    std::printf("%-12s %8zu %6zu %6zu %6zu\n", name.c_str(), at(Split::train) + at(Split::dev) + at(Split::eval),
                at(Split::train), at(Split::dev), at(Split::eval));
  }
  for (Split s : {Split::train, Split::dev, Split::eval}) {
    std::size_t pos = 0, neg = 0;
    for (const auto* u : corpus.split(s)) ++(u->positive ? pos : neg);
    std::printf("%-5s utterances: %zu positive, %zu negative\n", to_string(s).c_str(), pos, neg);
  }
  std::printf("enrollments: %zu\n", corpus.enrollments.size());
  return 0;
}

// --------------------------------------------------------------------- train

int cmd_train(RunConfig c, bool resume, std::optional<std::uint64_t> stop_after) {
  const fs::path corpus_dir = require(c.paths.corpus, "--corpus");
  const fs::path out = require(c.paths.out, "--out");
  c.train.validate();
  const Corpus corpus = load_corpus(corpus_dir);
  c.corpus = corpus.config;
  RunConfig snapshot = c;
  snapshot.paths.out.clear();
  write_snapshot(snapshot, out);

  TrainOptions opt;
  opt.out_dir = out;
  opt.resume = resume;
  opt.stop_after = stop_after;
  opt.on_metrics = [](const MetricRow& r) {
    if (r.dev_eer)
      spdlog::info("step {} train_loss {:.4f} dev_eer {:.4f}", r.step, r.train_loss, *r.dev_eer);
    else
      spdlog::debug("step {} train_loss {:.4f}", r.step, r.train_loss);
  };
  spdlog::info("training {} (robust_prob {}) on corpus {}", to_string(c.train.variant), c.train.robust_prob,
               corpus.corpus_id());
  const TrainResult r = train(c.train, corpus, opt);
  if (r.steps_done < c.train.steps) {
    std::printf("stopped at step %llu of %zu; state saved in %s\n",
                static_cast<unsigned long long>(r.steps_done), c.train.steps, out.string().c_str());
    return 0;
  }
  const MetricRow& last = r.metrics.back();
  std::printf("trained %s for %zu steps: final train loss %.4f", to_string(c.train.variant).c_str(),
              c.train.steps, last.train_loss);
  if (last.dev_eer) std::printf(", dev EER %.4f", *last.dev_eer);
  std::printf("\ncheckpoints: %s, %s\n", (out / "final.kwt").string().c_str(), (out / "best.kwt").string().c_str());
  return 0;
}

// ---------------------------------------------------------------------- eval

int cmd_eval(RunConfig c) {
  const fs::path ckpt = checkpoint_file(c);
  const fs::path corpus_dir = require(c.paths.corpus, "--corpus");
  const fs::path out = require(c.paths.out, "--out");
  CheckpointInfo info;
  const KwsModel model = load_model(ckpt, &info);
  const Corpus corpus = load_corpus(corpus_dir);
  c.corpus = corpus.config;
  const Variant variant = checkpoint_variant(c, model, info);
  if (info.extra.contains("corpus_id") && info.extra.at("corpus_id") != corpus.corpus_id())
    spdlog::warn("checkpoint was trained on corpus {} but is evaluated on {}",
                 info.extra.at("corpus_id").get<std::string>(), corpus.corpus_id());
  if (corpus.split(c.eval.split).empty())
    throw DataError("the " + to_string(c.eval.split) + " split of " + corpus_dir.string() + " is empty");

  const ScoringOptions opt = scoring_options(c, variant, info);
  const ScoringResult result = score_split(model, corpus, c.eval.split, opt);
  if (result.skipped) spdlog::warn("skipped {} utterances without an enrollment", result.skipped);
  if (result.fallbacks)
    spdlog::warn("{} utterances without an enrollment scored with the constant vector", result.fallbacks);
  if (result.scored.empty()) throw DataError("no utterance could be scored");

  std::vector<double> pos, neg;
  for (const auto& s : result.scored) (s.positive ? pos : neg).push_back(s.score);
  if (pos.empty() || neg.empty()) throw DataError("the evaluated split needs positive and negative utterances");
  const EvalReport report = stratified_report(result.scored);
  const double robust_prob = info.extra.value("robust_prob", 0.0);
  const std::string label = run_label(variant, robust_prob, c.eval.condition);

  RunConfig snapshot = c;
  snapshot.paths.out.clear();
  write_snapshot(snapshot, out);
  write_scores_csv(out / "scores.csv", result.scored);
  write_det_csv(out / "det.csv", det_curve(pos, neg));
  const json meta = {{"label", label},
                     {"variant", to_string(variant)},
                     {"robust_prob", robust_prob},
                     {"condition", to_string(c.eval.condition)},
                     {"split", to_string(c.eval.split)},
                     {"corpus_id", corpus.corpus_id()},
                     {"checkpoint", {{"step", info.step}, {"seed", info.seed}, {"kind", info.extra.value("checkpoint", "")}}},
                     {"scored", result.scored.size()},
                     {"skipped", result.skipped},
                     {"fallbacks", result.fallbacks}};
  write_text(out / "report.json", json{{"meta", meta}, {"report", report.to_json()}}.dump(2) + "\n");
  const std::string table = render_table({{label, report}});
  write_text(out / "report.txt", table);
  std::printf("%s", table.c_str());
  std::printf("overall EER %.4f (%zu positives, %zu negatives)\n", report.overall.eer, pos.size(), neg.size());
  return 0;
}

// -------------------------------------------------------------- stream-infer

struct StreamInputs {
  std::string wav;
  std::string features;
  std::string utterance;
  std::string enrollment;
  std::string speaker;
  std::string source;
};

const Utterance& find_utterance(const Corpus& corpus, const std::string& id) {
  for (const auto& u : corpus.utterances)
    if (u.id == id) return u;
  throw DataError("utterance '" + id + "' is not in the corpus");
}

std::optional<Tensor> enrollment_from_store(const KwsModel& m, const StreamInputs& in) {
  const EnrollmentStore store = EnrollmentStore::load_jsonl(in.enrollment);
  const std::size_t dim = *m.config.film_embedding_dim;
  if (in.speaker.empty()) throw ConfigError("--enrollment needs --speaker");
  for (EmbeddingKind kind : {EmbeddingKind::td, EmbeddingKind::ti})
    for (const auto& e : store.lookup(in.speaker, kind))
      if (e.dim() == dim && (in.source.empty() || e.source_utterance_id == in.source)) return e.values;
  return std::nullopt;
}

int cmd_stream_infer(RunConfig c, const StreamInputs& in) {
  const fs::path ckpt = checkpoint_file(c);
  CheckpointInfo info;
  const KwsModel model = load_model(ckpt, &info);
  const Variant variant = checkpoint_variant(c, model, info);

  std::optional<Corpus> corpus;
  Tensor features;
  const Utterance* utt = nullptr;
  if (!in.wav.empty()) {
    features = extract_logmel(read_wav(in.wav), kSampleRate, model.config.input_dim);
  } else if (!in.features.empty()) {
    features = read_tensor_file(in.features).get(require(in.utterance, "--utterance") + "/features");
  } else {
    corpus = load_corpus(require(c.paths.corpus, "--wav, --features or --corpus"));
    utt = &find_utterance(*corpus, require(in.utterance, "--utterance"));
    features = utt->features;
  }
  if (features.rows() == 0) throw DataError("input has no frames");

  std::optional<Tensor> embedding;
  if (model.config.conditioned()) {
    const std::size_t dim = *model.config.film_embedding_dim;
    if (c.eval.condition == Condition::with_embedding) {
      if (!in.enrollment.empty()) {
        embedding = enrollment_from_store(model, in);
      } else if (utt) {
        try {
          embedding = scoring_embedding(model, *corpus, *utt, scoring_options(c, variant, info));
        } catch (const NoEnrollmentError& e) {
          spdlog::warn("{}", e.what());
        }
      }
      if (!embedding) spdlog::warn("no enrollment reference for a conditioned model; using the constant vector");
    }
    if (!embedding) embedding = constant_vector(dim).values;
  }

  if (!c.paths.out.empty()) {
    RunConfig snapshot = c;
    snapshot.paths.out.clear();
    write_snapshot(snapshot, c.paths.out);
  }
  StreamSession session(model, embedding);
  Tensor posteriors({features.rows(), model.config.num_classes});
  for (std::size_t f = 0; f < features.rows(); ++f) {
    const Tensor frame({features.cols()}, std::vector<double>(features.row(f).begin(), features.row(f).end()));
    const Tensor p = stream_step(model, session, frame);
    std::copy(p.values().begin(), p.values().end(), posteriors.row(f).begin());
    std::printf("%zu %.9f\n", f, p[1]);
  }
  std::printf("score %.17g\n", utterance_score(posteriors, c.eval.smooth_window));
  return 0;
}

// -------------------------------------------------------------------- report

struct LoadedRun {
  fs::path path;
  json meta;
  EvalReport report;
};

LoadedRun load_run(const fs::path& p) {
  const fs::path file = fs::is_directory(p) ? p / "report.json" : p;
  const json j = read_json(file);
  try {
    return {p, j.at("meta"), EvalReport::from_json(j.at("report"))};
  } catch (const json::exception& e) {
    throw CorruptFileError(file.string() + ": " + e.what());
  }
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& baseline, const std::string& out) {
  if (dirs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<LoadedRun> runs;
  for (const auto& d : dirs) runs.push_back(load_run(d));
  std::optional<std::size_t> base;
  if (!baseline.empty()) {
    for (std::size_t i = 0; i < runs.size() && !base; ++i)
      if (fs::equivalent(runs[i].path, baseline)) base = i;
    if (!base) {
      runs.insert(runs.begin(), load_run(baseline));
      base = 0;
    }
  } else {
    for (std::size_t i = 0; i < runs.size() && !base; ++i)
      if (runs[i].meta.value("variant", "") == "baseline") base = i;
  }
  const std::string corpus_id = runs.front().meta.value("corpus_id", "");
  for (const auto& r : runs)
    if (r.meta.value("corpus_id", "") != corpus_id)
      throw DataError("runs were evaluated on different corpora: " + runs.front().path.string() + " (" + corpus_id +
                      ") vs " + r.path.string() + " (" + r.meta.value("corpus_id", "") + ")");

  std::vector<std::pair<std::string, EvalReport>> rows;
  json merged = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::string label = runs[i].meta.value("label", runs[i].path.string());
    EvalReport r = runs[i].report;
    if (base && runs.size() > 1 && i != *base)
      r = compare_reports(r, runs[*base].report, runs[*base].meta.value("label", "baseline"));
    rows.emplace_back(label, r);
    merged.push_back({{"meta", runs[i].meta}, {"report", r.to_json()}});
  }
  const std::string table = render_table(rows);
  std::printf("%s", table.c_str());
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(fs::path(out) / "report.json",
               json{{"corpus_id", corpus_id}, {"baseline", base ? json(rows[*base].first) : json(nullptr)},
                    {"runs", merged}}.dump(2) + "\n");
    write_text(fs::path(out) / "report.txt", table);
  }
  return 0;
}

// ------------------------------------------------------------------ selftest

int cmd_selftest(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_selftest(seed)) {
    std::printf("%s %-14s %s (%.2fs)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), r.seconds);
    ok = ok && r.passed;
  }
  return ok ? 0 : kExitSelftest;
}

// ------------------------------------------------------------------ parsing

template <class T>
CLI::Validator enum_check(T (*parse)(std::string_view)) {
  return CLI::Validator(
      [parse](std::string& s) -> std::string {
        try {
          parse(s);
          return {};
        } catch (const std::exception& e) {
          return e.what();
        }
      },
      "", "");
}

int run(int argc, char** argv) {
  CLI::App app{"Speaker-conditioned keyword spotting: data, training, evaluation and inference"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "kws 1.0");

  std::string config, seed, out, variant, robust_prob, condition, corpus, checkpoint;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Master seed");
    sub->add_option("--out", out, "Output directory");
  };
  auto gen = app.add_subcommand("gen-data", "Generate the synthetic corpus and enrollment store");
  common(gen);

  bool resume = false;
  std::optional<std::uint64_t> stop_after;
  auto tr = app.add_subcommand("train", "Train one model variant");
  common(tr);
  tr->add_option("--corpus", corpus, "Corpus directory from gen-data");
  tr->add_option("--variant", variant, "baseline|ti_self|ti_cross|td_cross")->check(enum_check(parse_variant));
  tr->add_option("--robust-prob", robust_prob, "Probability of replacing the embedding by the constant vector");
  tr->add_flag("--resume", resume, "Continue from <out>/state.kwt");
  tr->add_option("--stop-after", stop_after, "Save state and stop after this many steps");

  auto ev = app.add_subcommand("eval", "Score a split and write scores, DET curve and report");
  common(ev);
  ev->add_option("--corpus", corpus, "Corpus directory");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file or training run directory");
  ev->add_option("--variant", variant, "Override the variant recorded in the checkpoint")
      ->check(enum_check(parse_variant));
  ev->add_option("--condition", condition, "with|without speaker embedding")->check(enum_check(parse_condition));

  StreamInputs si;
  auto st = app.add_subcommand("stream-infer", "Frame-by-frame posteriors and the utterance score");
  common(st);
  st->add_option("--checkpoint", checkpoint, "Checkpoint file or training run directory");
  st->add_option("--variant", variant, "Override the variant recorded in the checkpoint")
      ->check(enum_check(parse_variant));
  st->add_option("--condition", condition, "with|without speaker embedding")->check(enum_check(parse_condition));
  auto wav = st->add_option("--wav", si.wav, "PCM16 mono 16 kHz WAV file")->check(CLI::ExistingFile);
  auto feat = st->add_option("--features", si.features, "Feature file (.kwt) holding <utterance>/features")
                  ->check(CLI::ExistingFile);
  auto corp = st->add_option("--corpus", corpus, "Corpus directory");
  wav->excludes(feat)->excludes(corp);
  feat->excludes(corp);
  st->add_option("--utterance", si.utterance, "Utterance id");
  st->add_option("--enrollment", si.enrollment, "Enrollment store (JSONL)")->check(CLI::ExistingFile);
  st->add_option("--speaker", si.speaker, "Speaker id to look up in the enrollment store");
  st->add_option("--source", si.source, "Pick the enrollment made from this utterance");

  std::vector<std::string> runs;
  std::string baseline;
  auto rp = app.add_subcommand("report", "Merge evaluation runs into one comparison table");
  rp->add_option("runs", runs, "Evaluation output directories")->required();
  rp->add_option("--baseline", baseline, "Run used as the reference for relative improvements");
  rp->add_option("--out", out, "Write the merged report here");

  auto sf = app.add_subcommand("selftest", "Gradient and streaming equivalence suites");
  sf->add_option("--seed", seed, "Seed for the random cases");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  setup_logging();
  Overrides flags;
  auto number = [](const std::string& s, const char* name) -> std::uint64_t {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used == s.size() && s[0] != '-') return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string(name) + " must be a non-negative integer, got '" + s + "'");
  };
  if (!seed.empty()) flags.seed = number(seed, "--seed");
  if (!out.empty()) flags.out = out;
  if (!corpus.empty()) flags.corpus = corpus;
  if (!checkpoint.empty()) flags.checkpoint = checkpoint;
  if (!variant.empty()) flags.variant = parse_variant(variant);
  if (!condition.empty()) flags.condition = parse_condition(condition);
  if (!robust_prob.empty()) {
    try {
      flags.robust_prob = std::stod(robust_prob);
    } catch (const std::exception&) {
      throw ConfigError("--robust-prob must be a number, got '" + robust_prob + "'");
    }
  }
  const std::optional<fs::path> cfg_path = config.empty() ? std::nullopt : std::optional<fs::path>(config);

  if (*gen) return cmd_gen_data(resolve(cfg_path, flags));
  if (*tr) return cmd_train(resolve(cfg_path, flags), resume, stop_after);
  if (*ev) return cmd_eval(resolve(cfg_path, flags));
  if (*st) return cmd_stream_infer(resolve(cfg_path, flags), si);
  if (*rp) return cmd_report(runs, baseline, out);
  return cmd_selftest(flags.seed.value_or(1));
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return kExitRuntime;
  }
}
