// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

// OpenMP kernels against their serial references, at the shapes the full-size
// configuration actually runs: a 100-frame utterance through a 576-node
// SVDF with an 80-dim input and 6-frame memory.

#include <benchmark/benchmark.h>

#include "kws/kernels.hpp"
#include "kws/rng.hpp"

namespace {

using kws::Rng;
using kws::Tensor;

constexpr std::size_t kFrames = 100;

void BM_MatmulBt(benchmark::State& state, bool parallel) {
  const std::size_t nodes = static_cast<std::size_t>(state.range(0)), dim = 80;
  Rng rng(1);
  Tensor x = rng.normal_tensor({kFrames, dim}), w = rng.normal_tensor({nodes, dim});
  Tensor out({kFrames, nodes});
  for (auto _ : state) {
    if (parallel)
      kws::kernels::matmul_bt(x.data(), w.data(), out.data(), kFrames, dim, nodes);
    else
      kws::kernels::reference::matmul_bt(x.data(), w.data(), out.data(), kFrames, dim, nodes);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * kFrames * dim * nodes));
}

void BM_Matmul(benchmark::State& state, bool parallel) {
  const std::size_t nodes = static_cast<std::size_t>(state.range(0)), dim = 64;
  Rng rng(2);
  Tensor g = rng.normal_tensor({kFrames, dim}), w = rng.normal_tensor({dim, nodes});
  Tensor out({kFrames, nodes});
  for (auto _ : state) {
    if (parallel)
      kws::kernels::matmul(g.data(), w.data(), out.data(), kFrames, dim, nodes);
    else
      kws::kernels::reference::matmul(g.data(), w.data(), out.data(), kFrames, dim, nodes);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * kFrames * dim * nodes));
}

void BM_TimeFilter(benchmark::State& state, bool parallel) {
  const std::size_t nodes = static_cast<std::size_t>(state.range(0)), memory = 6;
  Rng rng(3);
  Tensor act = rng.normal_tensor({kFrames, nodes}), filt = rng.normal_tensor({nodes, memory});
  Tensor out({kFrames, nodes});
  for (auto _ : state) {
    if (parallel)
      kws::kernels::time_filter(act.data(), filt.data(), out.data(), kFrames, nodes, memory);
    else
      kws::kernels::reference::time_filter(act.data(), filt.data(), out.data(), kFrames, nodes,
                                           memory);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_TimeFilterBackward(benchmark::State& state, bool parallel) {
  const std::size_t nodes = static_cast<std::size_t>(state.range(0)), memory = 6;
  Rng rng(4);
  Tensor act = rng.normal_tensor({kFrames, nodes}), filt = rng.normal_tensor({nodes, memory});
  Tensor go = rng.normal_tensor({kFrames, nodes});
  Tensor ga({kFrames, nodes}), gf({nodes, memory});
  for (auto _ : state) {
    if (parallel)
      kws::kernels::time_filter_backward(act.data(), filt.data(), go.data(), ga.data(), gf.data(),
                                         kFrames, nodes, memory);
    else
      kws::kernels::reference::time_filter_backward(act.data(), filt.data(), go.data(), ga.data(),
                                                    gf.data(), kFrames, nodes, memory);
    benchmark::DoNotOptimize(ga.data());
  }
}

}  // namespace

BENCHMARK_CAPTURE(BM_MatmulBt, openmp, true)->Arg(64)->Arg(576);
BENCHMARK_CAPTURE(BM_MatmulBt, serial, false)->Arg(64)->Arg(576);
BENCHMARK_CAPTURE(BM_Matmul, openmp, true)->Arg(64)->Arg(576);
BENCHMARK_CAPTURE(BM_Matmul, serial, false)->Arg(64)->Arg(576);
BENCHMARK_CAPTURE(BM_TimeFilter, openmp, true)->Arg(64)->Arg(576);
BENCHMARK_CAPTURE(BM_TimeFilter, serial, false)->Arg(64)->Arg(576);
BENCHMARK_CAPTURE(BM_TimeFilterBackward, openmp, true)->Arg(576);
BENCHMARK_CAPTURE(BM_TimeFilterBackward, serial, false)->Arg(576);

BENCHMARK_MAIN();
