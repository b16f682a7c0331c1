// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>

#include "doctest.h"
#include "kws/checkpoint.hpp"
#include "kws/errors.hpp"
#include "kws/grad_check.hpp"
#include "kws/model.hpp"
#include "test_util.hpp"

using namespace kws;
using kws::test::random_tensor;

namespace {

KwsModelConfig tiny_config(std::optional<std::size_t> e = std::nullopt) {
  KwsModelConfig c;
  c.input_dim = 4;
  c.encoder = {{8, 2, 4}};
  c.decoder = {{4, 2}};
  c.film_embedding_dim = e;
  return c;
}

void randomize(KwsModel& m, Rng& rng) {
  for_each_param(m.weights, [&rng](const std::string&, Tensor& t) {
    for (auto& v : t.values()) v = 0.5 * rng.normal();
  });
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Straight-line forward of the tiny model: every layer spelled out with
// scalar loops and no shared code with the library forward.
Tensor tiny_oracle(const KwsModel& m, const Tensor& x, const Tensor& e) {
  const auto& w = m.weights;
  auto svdf = [](const SvdfLayerParams& p, const std::vector<std::vector<double>>& in) {
    const std::size_t F = in.size(), N = p.feature_filters.rows(), D = p.feature_filters.cols(),
                      T = p.time_filters.cols();
    std::vector<std::vector<double>> a(F, std::vector<double>(N)), y = a;
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t d = 0; d < D; ++d) a[f][n] += p.feature_filters.at(n, d) * in[f][d];
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t n = 0; n < N; ++n) {
        double s = p.bias[n];
        for (std::size_t t = 0; t < T; ++t) {
          const long src = long(f) - long(T) + 1 + long(t);
          if (src >= 0) s += p.time_filters.at(n, t) * a[std::size_t(src)][n];
        }
        y[f][n] = s > 0 ? s : 0;
      }
    return y;
  };
  auto dense = [](const DenseParams& p, const std::vector<std::vector<double>>& in) {
    std::vector<std::vector<double>> y(in.size(), std::vector<double>(p.weights.rows()));
    for (std::size_t f = 0; f < in.size(); ++f)
      for (std::size_t o = 0; o < p.weights.rows(); ++o) {
        double s = p.bias[o];
        for (std::size_t i = 0; i < p.weights.cols(); ++i) s += p.weights.at(o, i) * in[f][i];
        y[f][o] = s;
      }
    return y;
  };
  std::vector<std::vector<double>> h(x.rows());
  for (std::size_t f = 0; f < x.rows(); ++f) h[f].assign(x.row(f).begin(), x.row(f).end());
  h = dense(w.encoder[0].bottleneck, svdf(w.encoder[0].svdf, h));
  const auto& film = *w.film;
  for (auto& row : h)
    for (std::size_t k = 0; k < row.size(); ++k) {
      double g = film.b_gamma[k], b = film.b_beta[k];
      for (std::size_t j = 0; j < e.size(); ++j) {
        g += film.w_gamma.at(k, j) * e[j];
        b += film.w_beta.at(k, j) * e[j];
      }
      row[k] = g * row[k] + b;
    }
  h = dense(w.head, svdf(w.decoder[0], h));
  Tensor out({x.rows(), 2});
  for (std::size_t f = 0; f < x.rows(); ++f)
    for (std::size_t c = 0; c < 2; ++c) out.at(f, c) = h[f][c];
  return out;
}

}  // namespace

TEST_CASE("full-size configuration parameter budget") {
  const auto base = build_model(KwsModelConfig::full_size(), 1);
  const auto counted = count_params(base);
  const auto closed = closed_form_params(KwsModelConfig::full_size());
  CHECK(counted.total() == closed.total());
  CHECK(counted.total() == 327842);
  CHECK(counted.total() >= 250000);
  CHECK(counted.total() <= 450000);
  CHECK(counted.film == 0);
  CHECK(!base.weights.film.has_value());

  const auto cond = build_model(KwsModelConfig::full_size(64), 1);
  const auto cc = count_params(cond);
  CHECK(cc.film == 8320);
  CHECK(cc.total() - counted.total() == 2 * 64 * (64 + 1));
  CHECK(double(cc.film) / double(counted.total()) <= 0.03);
  CHECK(cc.encoder == counted.encoder);
  CHECK(cc.decoder == counted.decoder);
  CHECK(cc.head == counted.head);
}

TEST_CASE("single SVDF closed form") {
  KwsModelConfig c;
  c.input_dim = 3;
  c.encoder = {{2, 4, 1}};
  c.decoder = {{1, 1}};
  const auto b = closed_form_params(c);
  CHECK(b.encoder == 2 * 3 + 2 * 4 + 2 + (1 * 2 + 1));
  CHECK(b.total() == count_params(build_model(c, 0)).total());
}

TEST_CASE("build is deterministic per seed and validates config") {
  auto a = build_model(tiny_config(3), 42);
  auto b = build_model(tiny_config(3), 42);
  auto c = build_model(tiny_config(3), 43);
  bool same = true, differs = false;
  std::vector<Tensor> ta, tb, tc;
  for_each_param(a.weights, [&](const std::string&, const Tensor& t) { ta.push_back(t); });
  for_each_param(b.weights, [&](const std::string&, const Tensor& t) { tb.push_back(t); });
  for_each_param(c.weights, [&](const std::string&, const Tensor& t) { tc.push_back(t); });
  for (std::size_t i = 0; i < ta.size(); ++i) {
    same = same && ta[i] == tb[i];
    differs = differs || !(ta[i] == tc[i]);
  }
  CHECK(same);
  CHECK(differs);

  KwsModelConfig bad = tiny_config();
  bad.encoder.clear();
  CHECK_THROWS_AS(build_model(bad, 0), ConfigError);
  bad = tiny_config(0);
  CHECK_THROWS_AS(build_model(bad, 0), ConfigError);
}

TEST_CASE("FiLM identity: fresh conditioned model equals the weight-shared baseline") {
  KwsModelConfig c;
  c.input_dim = 10;
  c.encoder = {{16, 3, 6}, {16, 3, 6}};
  c.decoder = {{8, 5}};
  auto base = build_model(c, 5);
  c.film_embedding_dim = 7;
  auto cond = build_model(c, 5);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(rng, {1 + rng.index(40), 10});
    Tensor e = random_tensor(rng, {7});
    CHECK(forward_logits(cond, x, e) == forward_logits(base, x));
  }
}

TEST_CASE("baseline forward ignores the embedding; conditioned forward requires one") {
  auto base = build_model(tiny_config(), 1);
  Rng rng(4);
  Tensor x = random_tensor(rng, {9, 4});
  CHECK(forward_logits(base, x, random_tensor(rng, {3})) == forward_logits(base, x));
  auto cond = build_model(tiny_config(3), 1);
  CHECK_THROWS_AS(forward_logits(cond, x), UsageError);
  CHECK_THROWS_AS(forward_logits(cond, random_tensor(rng, {9, 5}), Tensor({3})), DimensionError);
}

TEST_CASE("tiny conditioned model matches the straight-line oracle") {
  auto m = build_model(tiny_config(3), 2);
  Rng rng(5);
  randomize(m, rng);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor(rng, {12, 4});
    Tensor e = random_tensor(rng, {3});
    CHECK(max_abs_diff(forward_logits(m, x, e), tiny_oracle(m, x, e)) <= 1e-10);
  }
}

TEST_CASE("streaming equals batch at model level") {
  KwsModelConfig c;
  c.input_dim = 6;
  c.encoder = {{12, 4, 5}, {12, 4, 5}};
  c.decoder = {{6, 8}, {6, 8}};
  c.film_embedding_dim = 4;
  auto m = build_model(c, 9);
  Rng rng(6);
  randomize(m, rng);
  Tensor x = random_tensor(rng, {30, 6});
  Tensor e = random_tensor(rng, {4});
  Tensor batch = forward_posteriors(m, x, e);
  StreamSession s(m, e);
  std::vector<Tensor> first;
  double worst = 0.0;
  for (std::size_t f = 0; f < 30; ++f) {
    Tensor p = stream_step(m, s, test::row_of(x, f));
    first.push_back(p);
    for (std::size_t k = 0; k < 2; ++k) worst = std::max(worst, std::abs(p[k] - batch.at(f, k)));
  }
  CHECK(worst <= 1e-6);
  CHECK(s.frames() == 30);
  s.reset();
  CHECK(s.frames() == 0);
  for (std::size_t f = 0; f < 30; ++f)
    CHECK(s.step(test::row_of(x, f)) == first[f]);

  auto other = build_model(c, 9);
  CHECK_THROWS_AS(stream_step(other, s, Tensor({6})), UsageError);
  CHECK_THROWS_AS(StreamSession(m, std::nullopt), UsageError);
}

TEST_CASE("full conditioned model passes grad_check") {
  auto m = build_model(tiny_config(3), 7);
  Rng rng(8);
  randomize(m, rng);
  Tensor x = random_tensor(rng, {10, 4});
  Tensor e = random_tensor(rng, {1, 3});
  std::vector<int> labels{0, 0, 0, 1, 1, 1, 1, 0, 0, 0};
  std::vector<Tensor> params;
  for_each_param(m.weights, [&](const std::string&, const Tensor& t) { params.push_back(t); });
  auto report = grad_check(
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        std::size_t i = 0;
        auto w = map_weights<ad::Var>(m.weights, [&](const Tensor&) { return v[i++]; });
        return ad::softmax_cross_entropy(forward(w, t.leaf(x), t.leaf(e)), labels);
      },
      params, 1e-5, 1e-4);
  CHECK(report.passed);
  CHECK(report.checked == count_params(m).total());
}

TEST_CASE("checkpoint round trip is bit exact") {
  test::TempDir dir("ckpt");
  auto m = build_model(tiny_config(3), 11);
  Rng rng(12);
  randomize(m, rng);
  CheckpointInfo info{17, 99, {{"variant", "td_cross"}}};
  save_model(m, dir / "a.ckpt", info);
  CheckpointInfo back;
  auto loaded = load_model(dir / "a.ckpt", &back);
  CHECK(back.step == 17);
  CHECK(back.seed == 99);
  CHECK(back.extra["variant"] == "td_cross");
  save_model(loaded, dir / "b.ckpt", back);
  CHECK(file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt"));
  Tensor x = random_tensor(rng, {8, 4});
  Tensor e = random_tensor(rng, {3});
  CHECK(forward_logits(loaded, x, e) == forward_logits(m, x, e));
}

TEST_CASE("checkpoint failure modes are distinct") {
  test::TempDir dir("ckpt-bad");
  auto m = build_model(tiny_config(), 1);
  save_model(m, dir / "base.ckpt");
  auto bytes = file_bytes(dir / "base.ckpt");

  {
    std::ofstream out(dir / "trunc.ckpt", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_model(dir / "trunc.ckpt"), CorruptFileError);

  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x40;
  {
    std::ofstream out(dir / "flip.ckpt", std::ios::binary);
    out.write(reinterpret_cast<const char*>(flipped.data()), std::streamsize(flipped.size()));
  }
  CHECK_THROWS_AS(load_model(dir / "flip.ckpt"), CorruptFileError);

  auto versioned = bytes;
  versioned[8] = 7;
  {
    std::ofstream out(dir / "ver.ckpt", std::ios::binary);
    out.write(reinterpret_cast<const char*>(versioned.data()), std::streamsize(versioned.size()));
  }
  CHECK_THROWS_AS(load_model(dir / "ver.ckpt"), VersionMismatchError);

  CHECK_THROWS_AS(load_model(dir / "base.ckpt", tiny_config(3)), ShapeMismatchError);
  CHECK_NOTHROW(load_model(dir / "base.ckpt", tiny_config()));
}

TEST_CASE("model config JSON rejects unknown keys") {
  auto j = model_config_to_json(KwsModelConfig::full_size(64));
  CHECK(model_config_from_json(j) == KwsModelConfig::full_size(64));
  j["bogus"] = 1;
  CHECK_THROWS_AS(model_config_from_json(j), ConfigError);
}
