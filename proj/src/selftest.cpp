// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kws/selftest.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "kws/grad_check.hpp"
#include "kws/layers.hpp"
#include "kws/model.hpp"
#include "kws/rng.hpp"

namespace kws {

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;

std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

SuiteResult timed(const std::string& name, const std::function<void(SuiteResult&)>& body) {
  SuiteResult r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  body(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

SuiteResult grad_result(const std::string& name, const LossBuilder& f, std::vector<Tensor> params) {
  return timed(name, [&](SuiteResult& r) {
    const auto g = grad_check(f, std::move(params), kEps, kTol);
    r.passed = g.passed;
    r.detail = fmt("max rel error %.3g over %.0f entries", g.max_rel_error, double(g.checked));
  });
}

void randomize(ModelWeights<Tensor>& w, Rng& rng, double scale) {
  for_each_param(w, [&](const std::string&, Tensor& t) {
    for (double& v : t.values()) v = scale * rng.normal();
  });
}

Tensor row_of(const Tensor& x, std::size_t f) {
  return Tensor({x.cols()}, std::vector<double>(x.row(f).begin(), x.row(f).end()));
}

// Largest |stream - batch| over every frame and class.
double stream_gap(const KwsModel& m, const Tensor& x, const std::optional<Tensor>& e) {
  const Tensor batch = forward_posteriors(m, x, e);
  StreamSession s(m, e);
  double worst = 0.0;
  for (std::size_t f = 0; f < x.rows(); ++f) {
    const Tensor p = stream_step(m, s, row_of(x, f));
    for (std::size_t k = 0; k < p.size(); ++k) worst = std::max(worst, std::abs(p[k] - batch.at(f, k)));
  }
  return worst;
}

}  // namespace

std::vector<SuiteResult> run_gradient_suite(std::uint64_t seed) {
  Rng rng(sub_seed(seed, "selftest-grad"));
  std::vector<SuiteResult> out;

  const Tensor x = rng.normal_tensor({8, 4});
  auto svdf = make_svdf(5, 4, 3, rng);
  svdf.bias = rng.normal_tensor({5}, 0.3);
  out.push_back(grad_result(
      "svdf",
      [&x](ad::Tape& t, std::span<const ad::Var> v) {
        return ad::sum(ad::tanh(svdf_forward(SvdfWeights<ad::Var>{v[0], v[1], v[2]}, t.leaf(x))));
      },
      {svdf.feature_filters, svdf.time_filters, svdf.bias}));

  auto dense = make_dense(3, 4, Activation::none, rng);
  dense.bias = rng.normal_tensor({3}, 0.3);
  out.push_back(grad_result(
      "dense",
      [&x](ad::Tape& t, std::span<const ad::Var> v) {
        return ad::sum(ad::tanh(dense_forward(DenseWeights<ad::Var>{v[0], v[1], Activation::relu}, t.leaf(x))));
      },
      {dense.weights, dense.bias}));

  const Tensor l = rng.normal_tensor({6, 4});
  const Tensor e = rng.normal_tensor({1, 3});
  const Tensor head = rng.normal_tensor({2, 4});
  const std::vector<int> labels{0, 1, 1, 0, 1, 0};
  out.push_back(grad_result(
      "film",
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        auto [gamma, beta] = film_project(FilmWeights<ad::Var>{v[0], v[1], v[2], v[3]}, t.leaf(e));
        return ad::softmax_cross_entropy(ad::matmul_bt(film_apply(t.leaf(l), gamma, beta), t.leaf(head)),
                                         labels);
      },
      {rng.normal_tensor({4, 3}), rng.normal_tensor({4}), rng.normal_tensor({4, 3}), rng.normal_tensor({4})}));

  const std::vector<int> ce_labels{1, 0, 2, 2, 1};
  out.push_back(grad_result(
      "softmax_ce",
      [&](ad::Tape&, std::span<const ad::Var> v) { return ad::softmax_cross_entropy(v[0], ce_labels); },
      {rng.normal_tensor({5, 3}, 2.0)}));

  KwsModelConfig c;
  c.input_dim = 4;
  c.encoder = {{8, 2, 4}};
  c.decoder = {{4, 2}};
  c.film_embedding_dim = 3;
  KwsModel m = build_model(c, seed);
  randomize(m.weights, rng, 0.5);
  const Tensor mx = rng.normal_tensor({10, 4});
  const Tensor me = rng.normal_tensor({1, 3});
  const std::vector<int> frame_labels{0, 0, 0, 1, 1, 1, 1, 0, 0, 0};
  std::vector<Tensor> params;
  for_each_param(m.weights, [&](const std::string&, const Tensor& t) { params.push_back(t); });
  out.push_back(grad_result(
      "full_model",
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        std::size_t i = 0;
        auto w = map_weights<ad::Var>(m.weights, [&](const Tensor&) { return v[i++]; });
        return ad::softmax_cross_entropy(forward(w, t.leaf(mx), t.leaf(me)), frame_labels);
      },
      std::move(params)));
  return out;
}

SuiteResult run_streaming_suite(std::uint64_t seed, int cases) {
  return timed("streaming", [&](SuiteResult& r) {
    Rng rng(sub_seed(seed, "selftest-stream"));
    double worst = 0.0;
    for (int i = 0; i < cases; ++i) {
      KwsModelConfig c;
      c.input_dim = 1 + rng.index(8);
      const std::size_t stages = 1 + rng.index(3);
      for (std::size_t s = 0; s < stages; ++s)
        c.encoder.push_back({1 + rng.index(12), 1 + rng.index(6), 1 + rng.index(6)});
      for (std::size_t s = 0, n = 1 + rng.index(2); s < n; ++s)
        c.decoder.push_back({1 + rng.index(8), 1 + rng.index(6)});
      if (rng.uniform() < 0.5) c.film_embedding_dim = 1 + rng.index(8);
      KwsModel m = build_model(c, rng.next());
      randomize(m.weights, rng, 0.5);
      const Tensor x = rng.normal_tensor({1 + rng.index(60), c.input_dim});
      std::optional<Tensor> e;
      if (c.film_embedding_dim) e = rng.normal_tensor({*c.film_embedding_dim});
      worst = std::max(worst, stream_gap(m, x, e));
    }
    const KwsModelConfig full = KwsModelConfig::full_size(64);
    const KwsModel pm = build_model(full, seed);
    const double full_gap =
        stream_gap(pm, rng.normal_tensor({100, full.input_dim}), rng.normal_tensor({64}));
    r.passed = worst <= 1e-6 && full_gap <= 1e-6;
    r.detail = fmt("max |stream - batch| %.3g over random models, %.3g on the full-size model", worst, full_gap);
  });
}

SuiteResult run_film_identity_suite(std::uint64_t seed, int cases) {
  return timed("film_identity", [&](SuiteResult& r) {
    Rng rng(sub_seed(seed, "selftest-film"));
    KwsModelConfig c;
    c.input_dim = 10;
    c.encoder = {{16, 3, 6}, {16, 3, 6}};
    c.decoder = {{8, 5}};
    const KwsModel base = build_model(c, seed);
    c.film_embedding_dim = 7;
    const KwsModel cond = build_model(c, seed);
    int equal = 0;
    for (int i = 0; i < cases; ++i) {
      const Tensor x = rng.normal_tensor({1 + rng.index(40), c.input_dim});
      const Tensor e = rng.normal_tensor({7}, 1.0 + 10.0 * rng.uniform());
      if (forward_logits(cond, x, e) == forward_logits(base, x)) ++equal;
    }
    r.passed = equal == cases;
    r.detail = fmt("%.0f of %.0f random inputs bitwise equal", equal, cases);
  });
}

std::vector<SuiteResult> run_selftest(std::uint64_t seed) {
  auto out = run_gradient_suite(seed);
  out.push_back(run_streaming_suite(seed));
  out.push_back(run_film_identity_suite(seed));
  return out;
}

}  // namespace kws
