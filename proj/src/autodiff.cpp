// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kws/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "kws/errors.hpp"
#include "kws/kernels.hpp"

namespace kws::ad {

const Tensor& Var::value() const { return tape->value(*this); }
const Tensor& Var::grad() const { return tape->grad(*this); }

Var Tape::leaf(Tensor value) { return record(std::move(value), "leaf", nullptr); }

Var Tape::record(Tensor value, const char* op, Backward backward) {
  nodes_.push_back(Node{std::move(value), Tensor{}, op, std::move(backward)});
  return Var{nodes_.size() - 1, this};
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("backward: variable belongs to another tape");
  if (value(loss).size() != 1)
    throw DimensionError("backward needs a scalar loss, got " + shape_str(value(loss).shape()));
  for (auto& n : nodes_) n.grad = Tensor::zeros_like(n.value);
  nodes_[loss.id].grad[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

std::optional<std::string> Tape::first_non_finite() const {
  for (const auto& n : nodes_)
    if (!n.value.all_finite()) return std::string(n.op);
  return std::nullopt;
}

namespace {

void require_same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || a.tape != b.tape)
    throw UsageError(std::string(op) + ": operands belong to different tapes");
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

enum class Broadcast { same, row_vector };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  const bool vec = b.rank() == 1 || (b.rank() == 2 && b.rows() == 1);
  if (vec && a.rank() >= 1 && b.size() == a.cols()) return Broadcast::row_vector;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

template <class F, class DF>
Var unary(Var a, const char* op, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id;
  return a.tape->record(std::move(y), op, [ia, df](Tape& t, std::size_t self) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  require_matrix(x, "matmul");
  require_matrix(w, "matmul");
  if (x.cols() != w.rows())
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()));
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  Tensor y({m, n});
  kernels::matmul(x.data(), w.data(), y.data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(y), "matmul", [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    // dA = G·Bᵀ, dB = Aᵀ·G
    kernels::matmul_bt(g.data(), t.value(ib).data(), t.grad(ia).data(), m, n, k, true);
    kernels::matmul_at(t.value(ia).data(), g.data(), t.grad(ib).data(), k, m, n, true);
  });
}

Var matmul_bt(Var a, Var b) {
  require_same_tape(a, b, "matmul_bt");
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  require_matrix(x, "matmul_bt");
  require_matrix(w, "matmul_bt");
  if (x.cols() != w.cols())
    throw DimensionError("matmul_bt: inner dimensions differ, " + shape_str(x.shape()) +
                         " x " + shape_str(w.shape()) + "^T");
  const std::size_t m = x.rows(), k = x.cols(), n = w.rows();
  Tensor y({m, n});
  kernels::matmul_bt(x.data(), w.data(), y.data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(y), "matmul_bt", [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    // dA = G·B, dB = Gᵀ·A
    kernels::matmul(g.data(), t.value(ib).data(), t.grad(ia).data(), m, n, k, true);
    kernels::matmul_at(g.data(), t.value(ia).data(), t.grad(ib).data(), n, m, k, true);
  });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  require_matrix(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y.at(j, i) = x.at(i, j);
  const std::size_t ia = a.id;
  return a.tape->record(std::move(y), "transpose", [ia, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += g.at(j, i);
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  const Broadcast kind = broadcast_kind(x, z, "add");
  Tensor y = x;
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += kind == Broadcast::same ? z[i] : z[i % n];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(y), "add", [ia, ib, kind, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    Tensor& gb = t.grad(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb[kind == Broadcast::same ? i : i % n] += g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  const Broadcast kind = broadcast_kind(x, z, "mul");
  Tensor y = x;
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= kind == Broadcast::same ? z[i] : z[i % n];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(y), "mul", [ia, ib, kind, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& z = t.value(ib);
    Tensor& ga = t.grad(ia);
    Tensor& gb = t.grad(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t j = kind == Broadcast::same ? i : i % n;
      ga[i] += g[i] * z[j];
      gb[j] += g[i] * x[i];
    }
  });
}

Var relu(Var a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var scale(Var a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.values()) s += v;
  const std::size_t ia = a.id;
  return a.tape->record(Tensor({1}, {s}), "sum", [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var time_filter(Var act, Var filters) {
  require_same_tape(act, filters, "time_filter");
  const Tensor& a = act.value();
  const Tensor& w = filters.value();
  require_matrix(a, "time_filter");
  require_matrix(w, "time_filter");
  if (a.cols() != w.rows())
    throw DimensionError("time_filter: activations " + shape_str(a.shape()) +
                         " do not match filters " + shape_str(w.shape()));
  const std::size_t frames = a.rows(), nodes = a.cols(), memory = w.cols();
  Tensor y({frames, nodes});
  kernels::time_filter(a.data(), w.data(), y.data(), frames, nodes, memory);
  const std::size_t ia = act.id, iw = filters.id;
  return act.tape->record(
      std::move(y), "time_filter", [ia, iw, frames, nodes, memory](Tape& t, std::size_t self) {
        kernels::time_filter_backward(t.value(ia).data(), t.value(iw).data(), t.grad(self).data(),
                                      t.grad(ia).data(), t.grad(iw).data(), frames, nodes, memory);
      });
}

Tensor softmax_rows(const Tensor& logits) {
  require_matrix(logits, "softmax_rows");
  Tensor p = logits;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) z += (v = std::exp(v - mx));
    for (double& v : row) v /= z;
  }
  return p;
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& x = logits.value();
  require_matrix(x, "softmax_cross_entropy");
  const std::size_t frames = x.rows(), classes = x.cols();
  if (labels.size() != frames)
    throw ValidationError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(frames) + " frames");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(l) +
                            " outside [0, " + std::to_string(classes) + ")");
  double loss = 0.0;
  for (std::size_t f = 0; f < frames; ++f) {
    auto row = x.row(f);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    loss += mx + std::log(z) - row[static_cast<std::size_t>(labels[f])];
  }
  loss /= static_cast<double>(frames);
  const std::size_t ia = logits.id;
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape->record(
      Tensor({1}, {loss}), "softmax_cross_entropy",
      [ia, lab = std::move(lab), frames](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] / static_cast<double>(frames);
        const Tensor p = softmax_rows(t.value(ia));
        Tensor& ga = t.grad(ia);
        for (std::size_t f = 0; f < frames; ++f) {
          auto pr = p.row(f);
          auto gr = ga.row(f);
          for (std::size_t c = 0; c < pr.size(); ++c)
            gr[c] += g * (pr[c] - (static_cast<int>(c) == lab[f] ? 1.0 : 0.0));
        }
      });
}

Var elementwise(ElementwiseOp op, Var a, std::optional<Var> b) {
  switch (op) {
    case ElementwiseOp::add:
    case ElementwiseOp::mul:
      if (!b) throw UsageError("elementwise add/mul needs a second operand");
      return op == ElementwiseOp::add ? add(a, *b) : mul(a, *b);
    case ElementwiseOp::relu:
      return relu(a);
    case ElementwiseOp::sigmoid:
      return sigmoid(a);
    case ElementwiseOp::tanh:
      return tanh(a);
  }
  throw UsageError("unknown elementwise op");
}

}  // namespace kws::ad
