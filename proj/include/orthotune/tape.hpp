// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "orthotune/tensor.hpp"

namespace orthotune {

class Tape;

enum class OpKind {
  kConstant,
  kParameter,
  kMatmul,
  kSolve,
  kDetach,
  kTranspose,
  kAdd,
  kSubtract,
  kHadamard,
  kScale,
  kSum,
  kAddRow,
  kConcatRows,
  kConcatCols,
  kSliceRows,
  kSliceCols,
  kGatherRows,
  kLayerNorm,
  kGelu,
  kSoftmaxRows,
  kNormalizeRows,
  kExp,
  kCrossEntropy,
  kKlDivergence,
  kSkewFromUpper,
};

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the node list
// is already a topological order; backward walks it in reverse and every
// adjoint accumulation happens in that fixed order.
//
// A node requires a gradient iff one of its inputs does. Detach nodes never
// do, so no adjoint crosses them.
class Tape {
 public:
  // Receives the node's adjoint and pushes contributions into inputs'.
  using BackwardFn = std::function<void(Tape&, const Matrix& adjoint)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  Var record(OpKind kind, Matrix value, std::vector<std::size_t> inputs, BackwardFn backward);

  // root must be 1x1. Clears adjoints from any earlier backward call first.
  void backward(Var root);

  // Adjoint of v after backward(); a zero matrix if nothing reached it.
  Matrix grad(Var v) const;

  // Adds delta into the adjoint of node id (no-op if it requires no grad).
  void accumulate(std::size_t id, const Matrix& delta);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  OpKind kind(std::size_t id) const { return nodes_[id].kind; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind;
    Matrix value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Matrix adjoint;  // allocated lazily
  };

  std::deque<Node> nodes_;  // stable references across appends
};

// Differentiable operations. Shapes are checked and DimensionError thrown on
// mismatch. All operands must live on the same tape.
Var matmul(Var a, Var b);
Var solve(Var a, Var b);  // X with a*X = b; LU with partial pivoting
Var detach(Var m);
Var transpose(Var a);
Var add(Var a, Var b);
Var subtract(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var sum(Var a);                       // 1x1
Var add_row(Var x, Var row);          // broadcast 1xn row over x's rows
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var gather_rows(Var table, std::span<const std::size_t> indices);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);  // per row
Var gelu(Var x);                                               // tanh form
Var softmax_rows(Var x);
Var normalize_rows(Var x);  // each row divided by its L2 norm
Var exp(Var x);

// Mean over rows of -log softmax(logits)[label]. Labels index columns.
Var cross_entropy(Var logits, std::span<const std::size_t> labels);
// Mean over rows of sum_c p_live log(p_live / p_anchor), p = softmax(row).
Var kl_divergence(Var live, Var anchor);

// Builds the d x d skew matrix whose strict upper triangle, read row-major,
// is `upper` (a 1 x d(d-1)/2 matrix).
Var skew_from_upper(Var upper, std::size_t dim);

}  // namespace orthotune
