// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include "orthotune/tape.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "orthotune/error.hpp"

namespace orthotune {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Tape& same_tape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ContractError("operands live on different tapes");
  }
  return *a.tape();
}

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw ContractError("operation on an unbound Var");
  return *a.tape();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a) + " vs " + shape_str(b));
  }
}

// Row-wise log-softmax, max-shifted.
Matrix log_softmax(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double m = in[0];
    for (double v : in) m = std::max(m, v);
    double s = 0.0;
    for (double v : in) s += std::exp(v - m);
    const double lse = m + std::log(s);
    auto o = out.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] - lse;
  }
  return out;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{OpKind::kConstant, std::move(value), {}, nullptr, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{OpKind::kParameter, std::move(value), {}, nullptr, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, Matrix value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  if (kind != OpKind::kDetach) {
    for (std::size_t id : inputs) needs = needs || nodes_[id].requires_grad;
  }
  nodes_.push_back(Node{kind, std::move(value), std::move(inputs),
                        needs ? std::move(backward) : nullptr, needs, {}});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Matrix& delta) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.adjoint.empty()) {
    n.adjoint = delta;
    return;
  }
  require_same_shape(n.adjoint, delta, "accumulate");
  for (std::size_t i = 0; i < delta.size(); ++i) n.adjoint[i] += delta[i];
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw ContractError("backward: root belongs to another tape");
  const Matrix& v = value(root.id());
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("backward: root must be 1x1, got " + shape_str(v));
  }
  for (Node& n : nodes_) n.adjoint = Matrix();
  if (!nodes_[root.id()].requires_grad) return;
  nodes_[root.id()].adjoint = Matrix(1, 1, 1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.adjoint.empty() || !n.backward) continue;
    n.backward(*this, n.adjoint);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.adjoint.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.adjoint;
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::kMatmul, matmul(a.value(), b.value()), {ia, ib},
                  [ia, ib](Tape& t, const Matrix& g) {
                    if (t.requires_grad(ia)) t.accumulate(ia, matmul(g, transpose(t.value(ib))));
                    if (t.requires_grad(ib)) t.accumulate(ib, matmul(transpose(t.value(ia)), g));
                  });
}

Var solve(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Matrix x = solve(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t self = t.size();
  // X = A^-1 B:  dB = A^-T G,  dA = -A^-T G X^T
  return t.record(OpKind::kSolve, std::move(x), {ia, ib},
                  [ia, ib, self](Tape& t, const Matrix& g) {
                    const Matrix gb = solve(transpose(t.value(ia)), g);
                    if (t.requires_grad(ib)) t.accumulate(ib, gb);
                    if (t.requires_grad(ia)) {
                      t.accumulate(ia, scale(matmul(gb, transpose(t.value(self))), -1.0));
                    }
                  });
}

Var detach(Var m) {
  Tape& t = tape_of(m);
  return t.record(OpKind::kDetach, m.value(), {m.id()}, nullptr);
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(OpKind::kTranspose, transpose(a.value()), {ia},
                  [ia](Tape& t, const Matrix& g) { t.accumulate(ia, transpose(g)); });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::kAdd, add(a.value(), b.value()), {ia, ib},
                  [ia, ib](Tape& t, const Matrix& g) {
                    t.accumulate(ia, g);
                    t.accumulate(ib, g);
                  });
}

Var subtract(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::kSubtract, subtract(a.value(), b.value()), {ia, ib},
                  [ia, ib](Tape& t, const Matrix& g) {
                    t.accumulate(ia, g);
                    if (t.requires_grad(ib)) t.accumulate(ib, scale(g, -1.0));
                  });
}

Var hadamard(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::kHadamard, hadamard(a.value(), b.value()), {ia, ib},
                  [ia, ib](Tape& t, const Matrix& g) {
                    if (t.requires_grad(ia)) t.accumulate(ia, hadamard(g, t.value(ib)));
                    if (t.requires_grad(ib)) t.accumulate(ib, hadamard(g, t.value(ia)));
                  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(OpKind::kScale, scale(a.value(), s), {ia},
                  [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, scale(g, s)); });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  const std::size_t r = a.rows(), c = a.cols();
  return t.record(OpKind::kSum, Matrix(1, 1, sum(a.value())), {ia},
                  [ia, r, c](Tape& t, const Matrix& g) { t.accumulate(ia, Matrix(r, c, g[0])); });
}

Var add_row(Var x, Var row) {
  Tape& t = same_tape(x, row);
  const Matrix& xv = x.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw DimensionError("add_row: row " + shape_str(rv) + " for matrix " + shape_str(xv));
  }
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv[c];
  const std::size_t ix = x.id(), ir = row.id();
  return t.record(OpKind::kAddRow, std::move(out), {ix, ir},
                  [ix, ir](Tape& t, const Matrix& g) {
                    t.accumulate(ix, g);
                    if (t.requires_grad(ir)) {
                      Matrix gr(1, g.cols());
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g(r, c);
                      t.accumulate(ir, gr);
                    }
                  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  Tape& t = tape_of(parts[0]);
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    if (p.cols() != cols) throw DimensionError("concat_rows: column mismatch");
    offsets.push_back(rows);
    rows += p.rows();
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Matrix& v = parts[i].value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + offsets[i] * cols);
  }
  return t.record(OpKind::kConcatRows, std::move(out), ids,
                  [ids, offsets, cols](Tape& t, const Matrix& g) {
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      if (!t.requires_grad(ids[i])) continue;
                      const std::size_t r = t.value(ids[i]).rows();
                      auto first = g.data().begin() + offsets[i] * cols;
                      t.accumulate(ids[i], Matrix(r, cols, std::vector<double>(first, first + r * cols)));
                    }
                  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch");
    offsets.push_back(cols);
    cols += p.cols();
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Matrix& v = parts[i].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, offsets[i] + c) = v(r, c);
  }
  return t.record(OpKind::kConcatCols, std::move(out), ids,
                  [ids, offsets](Tape& t, const Matrix& g) {
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      if (!t.requires_grad(ids[i])) continue;
                      const std::size_t c = t.value(ids[i]).cols();
                      Matrix part(g.rows(), c);
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t j = 0; j < c; ++j) part(r, j) = g(r, offsets[i] + j);
                      t.accumulate(ids[i], part);
                    }
                  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Matrix& v = a.value();
  if (begin + count > v.rows()) throw DimensionError("slice_rows: range past " + shape_str(v));
  const std::size_t cols = v.cols();
  auto first = v.data().begin() + begin * cols;
  Matrix out(count, cols, std::vector<double>(first, first + count * cols));
  const std::size_t ia = a.id();
  const std::size_t rows = v.rows();
  return t.record(OpKind::kSliceRows, std::move(out), {ia},
                  [ia, begin, rows, cols](Tape& t, const Matrix& g) {
                    Matrix full(rows, cols);
                    std::copy(g.data().begin(), g.data().end(), full.data().begin() + begin * cols);
                    t.accumulate(ia, full);
                  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Matrix& v = a.value();
  if (begin + count > v.cols()) throw DimensionError("slice_cols: range past " + shape_str(v));
  Matrix out(v.rows(), count);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = v(r, begin + c);
  const std::size_t ia = a.id();
  const std::size_t rows = v.rows(), cols = v.cols();
  return t.record(OpKind::kSliceCols, std::move(out), {ia},
                  [ia, begin, rows, cols](Tape& t, const Matrix& g) {
                    Matrix full(rows, cols);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < g.cols(); ++c) full(r, begin + c) = g(r, c);
                    t.accumulate(ia, full);
                  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  Tape& t = tape_of(table);
  const Matrix& v = table.value();
  Matrix out(indices.size(), v.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= v.rows()) {
      throw LookupError("gather_rows: index " + std::to_string(indices[i]) + " outside table of " +
                        std::to_string(v.rows()) + " rows");
    }
    auto src = v.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t ia = table.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const std::size_t rows = v.rows(), cols = v.cols();
  return t.record(OpKind::kGatherRows, std::move(out), {ia},
                  [ia, idx, rows, cols](Tape& t, const Matrix& g) {
                    Matrix full(rows, cols);
                    for (std::size_t i = 0; i < idx.size(); ++i)
                      for (std::size_t c = 0; c < cols; ++c) full(idx[i], c) += g(i, c);
                    t.accumulate(ia, full);
                  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain);
  same_tape(x, bias);
  const Matrix& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.rows() != 1 || gain.cols() != n || !gain.value().same_shape(bias.value())) {
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(n));
  }
  Matrix xhat(xv.rows(), n);
  Matrix inv_std(xv.rows(), 1);
  Matrix out(xv.rows(), n);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mean = 0.0;
    for (double v : xv.row(r)) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xv.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (xv(r, c) - mean) * is;
      out(r, c) = xhat(r, c) * gv[c] + bv[c];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.record(OpKind::kLayerNorm, std::move(out), {ix, ig, ib},
                  [ix, ig, ib, xhat, inv_std, n](Tape& t, const Matrix& g) {
                    const Matrix& gv = t.value(ig);
                    if (t.requires_grad(ig) || t.requires_grad(ib)) {
                      Matrix dg(1, n), db(1, n);
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < n; ++c) {
                          dg[c] += g(r, c) * xhat(r, c);
                          db[c] += g(r, c);
                        }
                      t.accumulate(ig, dg);
                      t.accumulate(ib, db);
                    }
                    if (!t.requires_grad(ix)) return;
                    Matrix dx(g.rows(), n);
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      double mean_dy = 0.0, mean_dy_xhat = 0.0;
                      for (std::size_t c = 0; c < n; ++c) {
                        const double dy = g(r, c) * gv[c];
                        mean_dy += dy;
                        mean_dy_xhat += dy * xhat(r, c);
                      }
                      mean_dy *= inv_n;
                      mean_dy_xhat *= inv_n;
                      for (std::size_t c = 0; c < n; ++c) {
                        const double dy = g(r, c) * gv[c];
                        dx(r, c) = inv_std[r] * (dy - mean_dy - xhat(r, c) * mean_dy_xhat);
                      }
                    }
                    t.accumulate(ix, dx);
                  });
}

Var gelu(Var x) {
  Tape& t = tape_of(x);
  Matrix out = x.value();
  for (double& v : out.data()) {
    const double u = kGeluC * (v + kGeluA * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  const std::size_t ix = x.id();
  return t.record(OpKind::kGelu, std::move(out), {ix}, [ix](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ix);
    Matrix dx(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double u = kGeluC * (v + kGeluA * v * v * v);
      const double th = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      dx[i] = g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
    t.accumulate(ix, dx);
  });
}

Var softmax_rows(Var x) {
  Tape& t = tape_of(x);
  Matrix out = log_softmax(x.value());
  for (double& v : out.data()) v = std::exp(v);
  const std::size_t ix = x.id();
  const std::size_t iy = t.size();
  return t.record(OpKind::kSoftmaxRows, std::move(out), {ix}, [ix, iy](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(iy);
    Matrix dx(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) = y(r, c) * (g(r, c) - dot);
    }
    t.accumulate(ix, dx);
  });
}

Var normalize_rows(Var x) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  Matrix norms(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (double v : xv.row(r)) s += v * v;
    const double nrm = std::sqrt(s);
    if (!(nrm > 0.0)) throw ContractError("normalize_rows: zero row " + std::to_string(r));
    norms[r] = nrm;
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) / nrm;
  }
  const std::size_t ix = x.id();
  const std::size_t iy = t.size();
  // d(x/|x|) = (g - y (y.g)) / |x|
  return t.record(OpKind::kNormalizeRows, std::move(out), {ix},
                  [ix, iy, norms](Tape& t, const Matrix& g) {
                    const Matrix& y = t.value(iy);
                    Matrix dx(y.rows(), y.cols());
                    for (std::size_t r = 0; r < y.rows(); ++r) {
                      double dot = 0.0;
                      for (std::size_t c = 0; c < y.cols(); ++c) dot += y(r, c) * g(r, c);
                      for (std::size_t c = 0; c < y.cols(); ++c)
                        dx(r, c) = (g(r, c) - y(r, c) * dot) / norms[r];
                    }
                    t.accumulate(ix, dx);
                  });
}

Var exp(Var x) {
  Tape& t = tape_of(x);
  Matrix out = x.value();
  for (double& v : out.data()) v = std::exp(v);
  const std::size_t ix = x.id();
  const std::size_t iy = t.size();
  return t.record(OpKind::kExp, std::move(out), {ix}, [ix, iy](Tape& t, const Matrix& g) {
    t.accumulate(ix, hadamard(g, t.value(iy)));
  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  Tape& t = tape_of(logits);
  const Matrix& z = logits.value();
  if (labels.size() != z.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(z.rows()) + " rows");
  }
  for (std::size_t l : labels) {
    if (l >= z.cols()) {
      throw LookupError("cross_entropy: label " + std::to_string(l) + " outside " +
                        std::to_string(z.cols()) + " classes");
    }
  }
  const Matrix lsm = log_softmax(z);
  const double inv_b = 1.0 / static_cast<double>(z.rows());
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) loss -= lsm(r, labels[r]);
  loss *= inv_b;
  const std::size_t iz = logits.id();
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return t.record(OpKind::kCrossEntropy, Matrix(1, 1, loss), {iz},
                  [iz, lsm, lab, inv_b](Tape& t, const Matrix& g) {
                    Matrix dz(lsm.rows(), lsm.cols());
                    for (std::size_t r = 0; r < lsm.rows(); ++r) {
                      for (std::size_t c = 0; c < lsm.cols(); ++c) dz(r, c) = std::exp(lsm(r, c));
                      dz(r, lab[r]) -= 1.0;
                      for (std::size_t c = 0; c < lsm.cols(); ++c) dz(r, c) *= g[0] * inv_b;
                    }
                    t.accumulate(iz, dz);
                  });
}

Var kl_divergence(Var live, Var anchor) {
  Tape& t = same_tape(live, anchor);
  require_same_shape(live.value(), anchor.value(), "kl_divergence");
  const Matrix lp = log_softmax(live.value());
  const Matrix lq = log_softmax(anchor.value());
  const double inv_b = 1.0 / static_cast<double>(lp.rows());
  double kl = 0.0;
  for (std::size_t r = 0; r < lp.rows(); ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < lp.cols(); ++c) row += std::exp(lp(r, c)) * (lp(r, c) - lq(r, c));
    kl += row;
  }
  kl *= inv_b;
  const std::size_t ip = live.id(), iq = anchor.id();
  return t.record(
      OpKind::kKlDivergence, Matrix(1, 1, kl), {ip, iq},
      [ip, iq, lp, lq, inv_b](Tape& t, const Matrix& g) {
        const double s = g[0] * inv_b;
        if (t.requires_grad(ip)) {
          // d/dz_c of sum_k p_k (lp_k - lq_k) = p_c ((lp_c - lq_c) - KL_row)
          Matrix dz(lp.rows(), lp.cols());
          for (std::size_t r = 0; r < lp.rows(); ++r) {
            double row = 0.0;
            for (std::size_t c = 0; c < lp.cols(); ++c)
              row += std::exp(lp(r, c)) * (lp(r, c) - lq(r, c));
            for (std::size_t c = 0; c < lp.cols(); ++c)
              dz(r, c) = s * std::exp(lp(r, c)) * ((lp(r, c) - lq(r, c)) - row);
          }
          t.accumulate(ip, dz);
        }
        if (t.requires_grad(iq)) {
          // d/dw_c of -sum_k p_k lq_k = q_c - p_c
          Matrix dw(lq.rows(), lq.cols());
          for (std::size_t i = 0; i < dw.size(); ++i) dw[i] = s * (std::exp(lq[i]) - std::exp(lp[i]));
          t.accumulate(iq, dw);
        }
      });
}

Var skew_from_upper(Var upper, std::size_t dim) {
  Tape& t = tape_of(upper);
  const Matrix& u = upper.value();
  const std::size_t m = dim * (dim - (dim > 0 ? 1 : 0)) / 2;
  if (u.size() != m || (m > 0 && u.rows() != 1)) {
    throw DimensionError("skew_from_upper: expected 1x" + std::to_string(m) + " entries for dim " +
                         std::to_string(dim) + ", got " + shape_str(u));
  }
  Matrix c(dim, dim);
  std::size_t k = 0;
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i + 1; j < dim; ++j, ++k) {
      c(i, j) = u[k];
      c(j, i) = -u[k];
    }
  const std::size_t iu = upper.id();
  const std::size_t ur = u.rows(), uc = u.cols();
  return t.record(OpKind::kSkewFromUpper, std::move(c), {iu},
                  [iu, dim, ur, uc](Tape& t, const Matrix& g) {
                    Matrix du(ur, uc);
                    std::size_t k = 0;
                    for (std::size_t i = 0; i < dim; ++i)
                      for (std::size_t j = i + 1; j < dim; ++j, ++k) du[k] = g(i, j) - g(j, i);
                    t.accumulate(iu, du);
                  });
}

}  // namespace orthotune
