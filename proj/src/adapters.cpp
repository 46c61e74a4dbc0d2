// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include "orthotune/adapters.hpp"

#include <cmath>

#include "orthotune/error.hpp"

namespace orthotune {

namespace {

constexpr double kSkewTolerance = 1e-12;

void require_skew(const Matrix& c) {
  if (c.rows() != c.cols()) throw DimensionError("cayley: matrix is not square");
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = i; j < c.cols(); ++j) {
      if (std::abs(c(i, j) + c(j, i)) > kSkewTolerance) {
        throw ContractError("cayley: input is not skew-symmetric at (" + std::to_string(i) + "," +
                            std::to_string(j) + ")");
      }
    }
}

}  // namespace

SkewParam SkewParam::zeros(std::size_t dim) { return SkewParam{dim, Matrix(1, count(dim))}; }

Matrix materialize_skew(const SkewParam& p) {
  Tape t;
  return skew_from_upper(t.constant(p.upper), p.dim).value();
}

Matrix cayley(const Matrix& c) {
  require_skew(c);
  const Matrix id = Matrix::identity(c.rows());
  return solve(add(id, c), subtract(id, c));
}

Var cayley(Var c) {
  require_skew(c.value());
  Var id = c.tape()->constant(Matrix::identity(c.rows()));
  return solve(add(id, c), subtract(id, c));
}

Matrix cayley_inverse(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("cayley_inverse: matrix is not square");
  const Matrix id = Matrix::identity(a.rows());
  try {
    return solve(add(id, a), subtract(id, a));
  } catch (const SingularMatrixError& e) {
    throw DomainError(std::string("cayley_inverse: I + A is singular (A has a -1 eigenvalue); ") +
                      e.what());
  }
}

std::pair<double, double> neumann_deviation(const Matrix& c) {
  const Matrix a = cayley(c);
  const Matrix id = Matrix::identity(c.rows());
  const Matrix two_c = scale(c, 2.0);
  return {frobenius_norm(subtract(a, add(id, two_c))), frobenius_norm(subtract(a, subtract(id, two_c)))};
}

OrthogonalAdapter::OrthogonalAdapter(std::size_t dim) : OrthogonalAdapter(SkewParam::zeros(dim)) {}

OrthogonalAdapter::OrthogonalAdapter(SkewParam skew) : skew_(std::move(skew)) {
  if (skew_.upper.size() != SkewParam::count(skew_.dim)) {
    throw DimensionError("skew parameter count " + std::to_string(skew_.upper.size()) +
                         " does not match dim " + std::to_string(skew_.dim));
  }
  a_ = cayley(materialize_skew(skew_));
}

void OrthogonalAdapter::set_upper(Matrix upper) {
  if (!upper.same_shape(skew_.upper)) throw DimensionError("set_upper: shape mismatch");
  skew_.upper = std::move(upper);
  a_ = cayley(materialize_skew(skew_));
}

LowRankAdapter LowRankAdapter::init(std::size_t d, std::size_t n, std::size_t rank,
                                    std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-kDownInitScale, kDownInitScale);
  LowRankAdapter a{rank, Matrix(d, rank), Matrix(rank, n)};
  for (double& v : a.down.data()) v = u(rng);
  return a;
}

AdapterMode parse_adapter_mode(const std::string& name) {
  if (name == "orthogonal") return AdapterMode::kOrthogonal;
  if (name == "lowrank") return AdapterMode::kLowRank;
  if (name == "none") return AdapterMode::kNone;
  throw ContractError("unknown adapter mode '" + name + "' (orthogonal|lowrank|none)");
}

std::string to_string(AdapterMode mode) {
  switch (mode) {
    case AdapterMode::kOrthogonal: return "orthogonal";
    case AdapterMode::kLowRank: return "lowrank";
    case AdapterMode::kNone: break;
  }
  return "none";
}

AdapterMode FrozenLinear::mode() const {
  if (std::holds_alternative<OrthogonalAdapter>(adapter)) return AdapterMode::kOrthogonal;
  if (std::holds_alternative<LowRankAdapter>(adapter)) return AdapterMode::kLowRank;
  return AdapterMode::kNone;
}

Matrix FrozenLinear::effective_weight() const {
  if (const auto* o = std::get_if<OrthogonalAdapter>(&adapter)) return matmul(o->matrix(), w0);
  if (const auto* l = std::get_if<LowRankAdapter>(&adapter)) return add(w0, l->delta());
  return w0;
}

std::size_t FrozenLinear::trainable_count() const {
  if (const auto* o = std::get_if<OrthogonalAdapter>(&adapter)) return o->skew().upper.size();
  if (const auto* l = std::get_if<LowRankAdapter>(&adapter)) return l->down.size() + l->up.size();
  return 0;
}

Var ParamBinder::bind(const Matrix& m, bool trainable) {
  auto it = vars_.find(&m);
  if (it != vars_.end()) return it->second;
  Var v = trainable ? tape_->parameter(m) : tape_->constant(m);
  vars_.emplace(&m, v);
  return v;
}

Var ParamBinder::base(const Matrix& m) { return bind(m, what_ == Trainable::kBaseWeights); }

Var ParamBinder::adapter(const Matrix& m) { return bind(m, what_ == Trainable::kAdapters); }

Var ParamBinder::effective_weight(const FrozenLinear& layer, bool use_adapters) {
  const auto key = std::make_pair(&layer, use_adapters);
  auto it = weights_.find(key);
  if (it != weights_.end()) return it->second;
  Var w0 = base(layer.w0);
  Var w = w0;
  if (use_adapters) {
    if (const auto* o = std::get_if<OrthogonalAdapter>(&layer.adapter)) {
      Var c = skew_from_upper(adapter(o->skew().upper), o->dim());
      w = matmul(cayley(c), w0);
    } else if (const auto* l = std::get_if<LowRankAdapter>(&layer.adapter)) {
      w = add(w0, matmul(adapter(l->down), adapter(l->up)));
    }
  }
  weights_.emplace(key, w);
  return w;
}

Matrix ParamBinder::grad(const Matrix& m) const {
  auto it = vars_.find(&m);
  if (it == vars_.end()) return Matrix(m.rows(), m.cols());
  return tape_->grad(it->second);
}

Var effective_forward(ParamBinder& binder, const FrozenLinear& layer, Var x, bool use_adapters) {
  if (x.rows() != layer.in_dim()) {
    throw DimensionError("effective_forward: input has " + std::to_string(x.rows()) +
                         " rows, layer expects " + std::to_string(layer.in_dim()));
  }
  Var z = matmul(transpose(binder.effective_weight(layer, use_adapters)), x);
  if (!layer.bias.empty()) z = transpose(add_row(transpose(z), binder.base(layer.bias)));
  return z;
}

Var linear_rows(ParamBinder& binder, const FrozenLinear& layer, Var x, bool use_adapters) {
  if (x.cols() != layer.in_dim()) {
    throw DimensionError("linear: input has " + std::to_string(x.cols()) + " features, layer expects " +
                         std::to_string(layer.in_dim()));
  }
  Var z = matmul(x, binder.effective_weight(layer, use_adapters));
  if (!layer.bias.empty()) z = add_row(z, binder.base(layer.bias));
  return z;
}

double hyperspherical_energy(const Matrix& w) {
  const std::size_t n = w.cols();
  Matrix unit(w.rows(), n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) s += w(i, j) * w(i, j);
    const double norm = std::sqrt(s);
    if (!(norm > kNeuronNormFloor)) {
      throw DegenerateNeuronError("hyperspherical_energy: neuron " + std::to_string(j) +
                                  " has norm " + std::to_string(norm));
    }
    for (std::size_t i = 0; i < w.rows(); ++i) unit(i, j) = w(i, j) / norm;
  }
  double energy = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < w.rows(); ++i) {
        const double d = unit(i, a) - unit(i, b);
        s += d * d;
      }
      const double dist = std::sqrt(s);
      if (!(dist > kCoincidenceTolerance)) {
        throw InfiniteEnergyError("hyperspherical_energy: neurons " + std::to_string(a) + " and " +
                                  std::to_string(b) + " coincide");
      }
      energy += 1.0 / dist;
    }
  return energy;
}

}  // namespace orthotune
