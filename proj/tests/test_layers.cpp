// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "kws/errors.hpp"
#include "kws/grad_check.hpp"
#include "kws/layers.hpp"
#include "test_util.hpp"

using namespace kws;
using kws::test::random_tensor;

namespace {

// Two-stage oracle: rank-1 projection per node, then a causal 1-D
// convolution of that node's activation sequence, written as plain loops.
Tensor svdf_oracle(const SvdfLayerParams& p, const Tensor& x) {
  const std::size_t frames = x.rows(), nodes = p.feature_filters.rows(), dim = x.cols();
  const std::size_t memory = p.time_filters.cols();
  std::vector<std::vector<double>> proj(nodes, std::vector<double>(frames));
  for (std::size_t n = 0; n < nodes; ++n)
    for (std::size_t f = 0; f < frames; ++f) {
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) s += p.feature_filters.at(n, d) * x.at(f, d);
      proj[n][f] = s;
    }
  Tensor y({frames, nodes});
  for (std::size_t n = 0; n < nodes; ++n)
    for (std::size_t f = 0; f < frames; ++f) {
      double s = p.bias[n];
      for (std::size_t t = 0; t < memory; ++t) {
        const long src = static_cast<long>(f) - static_cast<long>(memory) + 1 + static_cast<long>(t);
        if (src >= 0) s += p.time_filters.at(n, t) * proj[n][static_cast<std::size_t>(src)];
      }
      y.at(f, n) = std::max(0.0, s);
    }
  return y;
}

SvdfLayerParams random_svdf(Rng& rng, std::size_t nodes, std::size_t dim, std::size_t memory) {
  SvdfLayerParams p = make_svdf(nodes, dim, memory, rng);
  p.bias = random_tensor(rng, {nodes}, 0.3);
  return p;
}

Tensor stream_all(const SvdfLayerParams& p, SvdfState& state, const Tensor& x) {
  Tensor out({x.rows(), svdf_nodes(p)});
  for (std::size_t f = 0; f < x.rows(); ++f) {
    Tensor frame({x.cols()}, std::vector<double>(x.row(f).begin(), x.row(f).end()));
    Tensor y = svdf_forward_stream(p, state, frame);
    std::copy(y.values().begin(), y.values().end(), out.row(f).begin());
  }
  return out;
}

}  // namespace

TEST_CASE("svdf: direct arithmetic with unit memory") {
  SvdfLayerParams p{Tensor::matrix({{2}}), Tensor::matrix({{3}}), Tensor::vector({0})};
  CHECK(svdf_forward_batch(p, Tensor::matrix({{1}, {2}})) == Tensor::matrix({{6}, {12}}));
}

TEST_CASE("svdf: filter that only looks at the current frame equals memory 1") {
  Rng rng(1);
  Tensor x = random_tensor(rng, {12, 3});
  Tensor ff = random_tensor(rng, {1, 3});
  SvdfLayerParams one{ff, Tensor::matrix({{1.0}}), Tensor::vector({0.1})};
  SvdfLayerParams two{ff, Tensor::matrix({{0.0, 1.0}}), Tensor::vector({0.1})};
  CHECK(svdf_forward_batch(one, x) == svdf_forward_batch(two, x));
}

TEST_CASE("svdf: batch forward equals the two-stage oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t nodes = 1 + rng.index(8), dim = 1 + rng.index(6), memory = 1 + rng.index(7);
    auto p = random_svdf(rng, nodes, dim, memory);
    Tensor x = random_tensor(rng, {20, dim});
    CHECK(max_abs_diff(svdf_forward_batch(p, x), svdf_oracle(p, x)) <= 1e-12);
  }
}

TEST_CASE("svdf: dimension mismatch") {
  Rng rng(3);
  auto p = make_svdf(4, 3, 2, rng);
  CHECK_THROWS_AS(svdf_forward_batch(p, Tensor({5, 2})), DimensionError);
  SvdfState wrong(4, 3);
  CHECK_THROWS_AS(svdf_forward_stream(p, wrong, Tensor({3})), DimensionError);
  SvdfState ok(4, 2);
  CHECK_THROWS_AS(svdf_forward_stream(p, ok, Tensor({2})), DimensionError);
}

TEST_CASE("svdf: streaming equals batch") {
  Rng rng(4);
  auto p = random_svdf(rng, 16, 5, 6);
  Tensor x = random_tensor(rng, {50, 5});
  SvdfState state(16, 6);
  Tensor streamed = stream_all(p, state, x);
  Tensor batch = svdf_forward_batch(p, x);
  CHECK(max_abs_diff(streamed, batch) <= 1e-6);
  // frame 0 from a fresh state is row 0 of the batch output
  SvdfState fresh(16, 6);
  Tensor first = svdf_forward_stream(p, fresh, Tensor({5}, {x.row(0).begin(), x.row(0).end()}));
  for (std::size_t n = 0; n < 16; ++n) CHECK(first[n] == batch.at(0, n));

  state.reset();
  CHECK(state.frames_seen() == 0);
  CHECK(state.cursor() == 0);
  CHECK(stream_all(p, state, x) == streamed);
}

TEST_CASE("svdf state: cursor stays in range and missing history reads zero") {
  SvdfState s(2, 3);
  CHECK(s.history(0, 0) == 0.0);
  for (int i = 1; i <= 7; ++i) {
    const double v[] = {double(i), -double(i)};
    s.push(v);
    CHECK(s.cursor() < 3);
    CHECK(s.history(2, 0) == double(i));
    if (i == 1) CHECK(s.history(0, 1) == 0.0);
  }
  CHECK(s.history(0, 0) == 5.0);
}

TEST_CASE("svdf: streaming equivalence over randomized cases") {
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t nodes = 1 + rng.index(20), dim = 1 + rng.index(10), memory = 1 + rng.index(10);
    auto p = random_svdf(rng, nodes, dim, memory);
    Tensor x = random_tensor(rng, {1 + rng.index(60), dim});
    SvdfState state(nodes, memory);
    worst = std::max(worst, max_abs_diff(stream_all(p, state, x), svdf_forward_batch(p, x)));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("svdf: causality") {
  Rng rng(6);
  auto p = random_svdf(rng, 6, 4, 5);
  Tensor x = random_tensor(rng, {30, 4});
  Tensor y = svdf_forward_batch(p, x);
  const std::size_t cut = 17;
  Tensor x2 = x;
  for (std::size_t f = cut + 1; f < 30; ++f)
    for (auto& v : x2.row(f)) v += 5.0;
  Tensor y2 = svdf_forward_batch(p, x2);
  for (std::size_t f = 0; f <= cut; ++f)
    for (std::size_t n = 0; n < 6; ++n) CHECK(y.at(f, n) == y2.at(f, n));
}

TEST_CASE("svdf and dense gradients pass grad_check") {
  Rng rng(7);
  auto p = random_svdf(rng, 5, 4, 3);
  auto d = make_dense(3, 5, Activation::none, rng);
  Tensor x = random_tensor(rng, {8, 4});
  auto report = grad_check(
      [&x](ad::Tape& t, std::span<const ad::Var> v) {
        SvdfWeights<ad::Var> s{v[0], v[1], v[2]};
        DenseWeights<ad::Var> dw{v[3], v[4], Activation::relu};
        return ad::sum(ad::tanh(dense_forward(dw, svdf_forward(s, t.leaf(x)))));
      },
      {p.feature_filters, p.time_filters, p.bias, d.weights, d.bias}, 1e-5, 1e-4);
  CHECK(report.passed);
}

TEST_CASE("film_project: initialization and identity projection") {
  FilmParams init = make_film(3, 2);
  auto [g0, b0] = film_project(init, Tensor::vector({0.7, -4.0}));
  CHECK(g0 == Tensor::vector({1, 1, 1}));
  CHECK(b0 == Tensor::vector({0, 0, 0}));

  FilmParams eye{Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0}), Tensor({2, 2}),
                 Tensor::vector({0, 0})};
  auto [g, b] = film_project(eye, Tensor::vector({0.5, -0.5}));
  CHECK(g == Tensor::vector({0.5, -0.5}));
  CHECK(b == Tensor::vector({0, 0}));

  CHECK_THROWS_AS(film_project(eye, Tensor::vector({1, 2, 3})), DimensionError);
}

TEST_CASE("film_project: downstream gradient wrt w_gamma") {
  Rng rng(8);
  Tensor l = random_tensor(rng, {6, 4});
  Tensor e = random_tensor(rng, {1, 3});
  const std::vector<int> labels{0, 1, 1, 0, 1, 0};
  Tensor head = random_tensor(rng, {2, 4});
  auto report = grad_check(
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        FilmWeights<ad::Var> w{v[0], v[1], v[2], v[3]};
        auto [gamma, beta] = film_project(w, t.leaf(e));
        auto out = film_apply(t.leaf(l), gamma, beta);
        return ad::softmax_cross_entropy(ad::matmul_bt(out, t.leaf(head)), labels);
      },
      {random_tensor(rng, {4, 3}), random_tensor(rng, {4}), random_tensor(rng, {4, 3}),
       random_tensor(rng, {4})},
      1e-5, 1e-4);
  CHECK(report.passed);
}

TEST_CASE("film_apply examples") {
  CHECK(film_apply(Tensor::matrix({{1, 2}}), Tensor::vector({1, 1}), Tensor::vector({0, 0})) ==
        Tensor::matrix({{1, 2}}));
  CHECK(film_apply(Tensor::matrix({{3, 4}}), Tensor::vector({2, 0.5}), Tensor::vector({-1, 1})) ==
        Tensor::matrix({{5, 3}}));
  Rng rng(9);
  Tensor l = random_tensor(rng, {7, 3});
  Tensor beta = random_tensor(rng, {3});
  Tensor out = film_apply(l, Tensor({3}), beta);
  for (std::size_t f = 0; f < 7; ++f)
    for (std::size_t k = 0; k < 3; ++k) CHECK(out.at(f, k) == beta[k]);
  CHECK_THROWS_AS(film_apply(l, Tensor({2}), Tensor({2})), DimensionError);
}

TEST_CASE("film_apply with unit gamma and zero beta is the bitwise identity") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor l = random_tensor(rng, {1 + rng.index(30), 8});
    CHECK(film_apply(l, Tensor({8}, 1.0), Tensor({8})) == l);
  }
}

TEST_CASE("parameter counts match closed forms") {
  Rng rng(11);
  CHECK(param_count(make_svdf(2, 3, 4, rng)) == 16);
  CHECK(param_count(make_dense(64, 576, Activation::none, rng)) == 64 * 576 + 64);
  CHECK(param_count(make_film(64, 64)) == 8320);
  CHECK(param_count(make_film(64, 256)) == 2 * 64 * 257);
}
