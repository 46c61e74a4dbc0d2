// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <variant>

#include "orthotune/tape.hpp"
#include "orthotune/tensor.hpp"

namespace orthotune {

// Free parameters of a d x d skew-symmetric matrix: the strict upper triangle
// in row-major order, held as a 1 x d(d-1)/2 matrix.
struct SkewParam {
  std::size_t dim = 0;
  Matrix upper;

  static SkewParam zeros(std::size_t dim);
  static std::size_t count(std::size_t dim) { return dim < 2 ? 0 : dim * (dim - 1) / 2; }
};

Matrix materialize_skew(const SkewParam& p);

// A = (I + C)^-1 (I - C). Throws ContractError if c is not skew within 1e-12.
Matrix cayley(const Matrix& c);
Var cayley(Var c);

// C = (I + A)^-1 (I - A). Throws DomainError when I + A is singular, i.e. A
// has a -1 eigenvalue.
Matrix cayley_inverse(const Matrix& a);

// Frobenius distances of cayley(c) from I + 2C and from I - 2C. The smaller
// one is the true first-order expansion; its size shrinks quadratically in C.
std::pair<double, double> neumann_deviation(const Matrix& c);

// Orthogonal adapter: A = cayley(C(skew)); starts at C = 0, A = I.
class OrthogonalAdapter {
 public:
  explicit OrthogonalAdapter(std::size_t dim);
  explicit OrthogonalAdapter(SkewParam skew);

  const SkewParam& skew() const { return skew_; }
  std::size_t dim() const { return skew_.dim; }
  // Cached A, always consistent with skew().
  const Matrix& matrix() const { return a_; }

  // Replaces the free parameters and recomputes A.
  void set_upper(Matrix upper);

 private:
  SkewParam skew_;
  Matrix a_;
};

// Additive low-rank update W0 + down * up.
struct LowRankAdapter {
  std::size_t rank = 0;
  Matrix down;  // d x rank
  Matrix up;    // rank x n

  static constexpr std::size_t kDefaultRank = 4;
  static constexpr double kDownInitScale = 0.01;

  // down ~ U(-0.01, 0.01), up = 0, so the update starts at exactly zero.
  static LowRankAdapter init(std::size_t d, std::size_t n, std::size_t rank, std::mt19937_64& rng);
  Matrix delta() const { return orthotune::matmul(down, up); }
};

enum class AdapterMode { kNone, kOrthogonal, kLowRank };

AdapterMode parse_adapter_mode(const std::string& name);
std::string to_string(AdapterMode mode);

using Adapter = std::variant<std::monostate, OrthogonalAdapter, LowRankAdapter>;

// Pretrained d x n weight (columns are neurons), optional 1 x n bias, and the
// live adapter slot. The layer computes z = W^T x + b per input column.
struct FrozenLinear {
  Matrix w0;
  Matrix bias;  // empty when the layer has none
  Adapter adapter;

  std::size_t in_dim() const { return w0.rows(); }
  std::size_t out_dim() const { return w0.cols(); }
  AdapterMode mode() const;
  // A*W0, W0 + down*up, or W0.
  Matrix effective_weight() const;
  std::size_t trainable_count() const;
};

// Binds model tensors onto one tape. Every tensor is bound once per tape
// (keyed by address) so repeated use across samples shares a node and its
// gradient.
enum class Trainable { kNothing, kBaseWeights, kAdapters };

class ParamBinder {
 public:
  ParamBinder(Tape& tape, Trainable what) : tape_(&tape), what_(what) {}

  Tape& tape() { return *tape_; }
  Trainable trainable() const { return what_; }

  // Pretrained tensor: a parameter only while pretraining.
  Var base(const Matrix& m);
  // Adapter tensor: a parameter only while finetuning adapters.
  Var adapter(const Matrix& m);
  // Effective weight of the layer on this tape, memoized per layer and flag.
  Var effective_weight(const FrozenLinear& layer, bool use_adapters);

  // Gradient of the last backward for a bound tensor; zeros if unbound.
  Matrix grad(const Matrix& m) const;
  bool bound(const Matrix& m) const { return vars_.count(&m) != 0; }

 private:
  Var bind(const Matrix& m, bool trainable);

  Tape* tape_;
  Trainable what_;
  std::map<const Matrix*, Var> vars_;
  std::map<std::pair<const FrozenLinear*, bool>, Var> weights_;
};

// Column-batch forward of one layer: x is d x batch, result is n x batch.
Var effective_forward(ParamBinder& binder, const FrozenLinear& layer, Var x,
                      bool use_adapters = true);
// Row-batch form used inside the encoders: x is batch x d.
Var linear_rows(ParamBinder& binder, const FrozenLinear& layer, Var x, bool use_adapters);

inline constexpr double kNeuronNormFloor = 1e-12;
inline constexpr double kCoincidenceTolerance = 1e-12;

// Sum over ordered pairs i != j of 1 / |w_i/|w_i| - w_j/|w_j||, columns w_i.
double hyperspherical_energy(const Matrix& w);

}  // namespace orthotune
