// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kws/tensor.hpp"

// Reverse-mode automatic differentiation on an explicit tape.
//
// A Tape owns every value computed during a forward pass together with the
// closure that propagates its adjoint. backward() zeroes all gradient
// buffers, seeds the scalar loss with 1, and walks the nodes in exact reverse
// order of recording. Tapes are single-threaded; independent tapes may run
// concurrently.

namespace kws::ad {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  Tape* tape = nullptr;

  bool valid() const { return tape != nullptr; }
  const Tensor& value() const;
  const Tensor& grad() const;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input or parameter. Gradients are collected for every leaf.
  Var leaf(Tensor value);

  /// Result of a differentiable op; `backward` reads grad(self) and adds
  /// into the gradients of its parents.
  Var record(Tensor value, const char* op, Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  Tensor& grad(std::size_t id) { return nodes_.at(id).grad; }
  const char* op_name(std::size_t id) const { return nodes_.at(id).op; }

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  /// Name of the earliest op whose output holds NaN or Inf.
  std::optional<std::string> first_non_finite() const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    const char* op;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// ---- ops -----------------------------------------------------------------

Var matmul(Var a, Var b);     ///< a[m×k] · b[k×n]
Var matmul_bt(Var a, Var b);  ///< a[m×k] · b[n×k]ᵀ
Var transpose(Var a);

/// Binary ops accept equal shapes, or `b` as a vector broadcast over the
/// last axis of `a` (b of shape [n] or [1×n] with n == a.cols()).
Var add(Var a, Var b);
Var mul(Var a, Var b);

Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);

Var scale(Var a, double factor);
Var sum(Var a);

/// Causal per-column FIR used by SVDF layers. act[F×N], filters[N×T].
Var time_filter(Var act, Var filters);

/// Mean over frames of -log softmax(logits[f])[labels[f]]. Row max is
/// subtracted before exponentiation.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

enum class ElementwiseOp { add, mul, relu, sigmoid, tanh };

/// Dispatcher over the elementwise family; `b` is required for add/mul.
Var elementwise(ElementwiseOp op, Var a, std::optional<Var> b = std::nullopt);

// ---- plain tensor helpers ---------------------------------------------------

/// Row-wise softmax of a [F×C] tensor.
Tensor softmax_rows(const Tensor& logits);

}  // namespace kws::ad
