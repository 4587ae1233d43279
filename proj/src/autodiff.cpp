#include "simt/autodiff.hpp"

#include <cmath>
#include <string>

#include "simt/error.hpp"
#include "simt/random.hpp"

namespace simt::ad {

const Matrix& Var::value() const { return tape_->value(index_); }

double Var::scalar() const {
  const auto& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar() on a non-1x1 value");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::make(Matrix value, bool requires_grad, Backward backward) {
  nodes_.push_back(
      Node{std::move(value), {}, requires_grad, false, requires_grad ? std::move(backward) : nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix& Tape::grad(int node) {
  auto& n = nodes_[static_cast<std::size_t>(node)];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

const Matrix* Tape::grad_if_any(int node) const {
  const auto& n = nodes_[static_cast<std::size_t>(node)];
  return n.has_grad ? &n.grad : nullptr;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw ShapeError("backward: root belongs to another tape");
  const auto& rv = value(root.index());
  if (rv.rows() != 1 || rv.cols() != 1) throw ShapeError("backward: root must be 1x1");
  if (!std::isfinite(rv(0, 0))) throw NumericError("backward: non-finite loss");
  grad(root.index())(0, 0) += 1.0;
  for (int i = root.index(); i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.has_grad && n.backward) n.backward(*this, i);
  }
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape() != b.tape() || a.tape() == nullptr) throw ShapeError("operands on different tapes");
  return *a.tape();
}

void require_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul", a.value(), b.value());
  Matrix out = a.value() * b.value();
  const int ia = a.index(), ib = b.index();
  return t.make(std::move(out), t.requires_grad(ia) || t.requires_grad(ib), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_shape(a.cols() == b.cols(), "matmul_nt", a.value(), b.value());
  Matrix out = a.value() * b.value().transpose();
  const int ia = a.index(), ib = b.index();
  return t.make(std::move(out), t.requires_grad(ia) || t.requires_grad(ib), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib);
    if (t.requires_grad(ib)) t.grad(ib).noalias() += g.transpose() * t.value(ia);
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  const int ia = a.index();
  return t.make(a.value().transpose(), t.requires_grad(ia), [ia](Tape& t, int self) {
    t.grad(ia) += t.grad(self).transpose();
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.value(), b.value());
  const int ia = a.index(), ib = b.index();
  return t.make(a.value() + b.value(), t.requires_grad(ia) || t.requires_grad(ib),
                [ia, ib](Tape& t, int self) {
                  if (t.requires_grad(ia)) t.grad(ia) += t.grad(self);
                  if (t.requires_grad(ib)) t.grad(ib) += t.grad(self);
                });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row", a.value(), row.value());
  Matrix out = a.value().rowwise() + row.value().row(0);
  const int ia = a.index(), ir = row.index();
  return t.make(std::move(out), t.requires_grad(ia) || t.requires_grad(ir), [ia, ir](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ir)) t.grad(ir) += g.colwise().sum();
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  const int ia = a.index();
  return t.make(a.value() * s, t.requires_grad(ia), [ia, s](Tape& t, int self) {
    t.grad(ia) += t.grad(self) * s;
  });
}

Var relu(Var a) {
  Tape& t = *a.tape();
  const int ia = a.index();
  return t.make(a.value().cwiseMax(0.0), t.requires_grad(ia), [ia](Tape& t, int self) {
    t.grad(ia) += (t.value(ia).array() > 0.0).select(t.grad(self), 0.0);
  });
}

Var exp(Var a) {
  Tape& t = *a.tape();
  const int ia = a.index();
  return t.make(a.value().array().exp().matrix(), t.requires_grad(ia), [ia](Tape& t, int self) {
    t.grad(ia) += t.grad(self).cwiseProduct(t.value(self));
  });
}

Var dropout(Var a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  Tape& t = *a.tape();
  Matrix mask(a.rows(), a.cols());
  const double keep = 1.0 - p;
  for (Eigen::Index j = 0; j < mask.cols(); ++j)
    for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
  const int ia = a.index();
  Matrix out = a.value().cwiseProduct(mask);
  return t.make(std::move(out), t.requires_grad(ia), [ia, mask = std::move(mask)](Tape& t, int self) {
    t.grad(ia) += t.grad(self).cwiseProduct(mask);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain);
  const Matrix& xv = x.value();
  const auto n = xv.cols();
  require_shape(gain.cols() == n && bias.cols() == n && gain.rows() == 1 && bias.rows() == 1,
                "layer_norm", xv, gain.value());
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const int ix = x.index(), ig = gain.index(), ib = bias.index();
  const bool rg = t.requires_grad(ix) || t.requires_grad(ig) || t.requires_grad(ib);
  return t.make(std::move(out), rg,
                [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(ig)) t.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
                  if (t.requires_grad(ib)) t.grad(ib) += g.colwise().sum();
                  if (t.requires_grad(ix)) {
                    const auto& gv = t.value(ig);
                    Matrix& gx = t.grad(ix);
                    for (Eigen::Index r = 0; r < g.rows(); ++r) {
                      const Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gv.row(0));
                      const double m1 = dxhat.mean();
                      const double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
                      gx.row(r) += inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
                    }
                  }
                });
}

Var masked_softmax(Var scores, std::span<const int> limits) {
  Tape& t = *scores.tape();
  const Matrix& s = scores.value();
  if (static_cast<Eigen::Index>(limits.size()) != s.rows()) {
    throw ShapeError("masked_softmax: one limit per row required");
  }
  Matrix p = Matrix::Zero(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const Eigen::Index lim = limits[static_cast<std::size_t>(r)];
    if (lim < 1 || lim > s.cols()) throw ShapeError("masked_softmax: limit out of range");
    const double mx = s.row(r).head(lim).maxCoeff();
    auto head = p.row(r).head(lim);
    head = (s.row(r).head(lim).array() - mx).exp().matrix();
    head /= head.sum();
  }
  const int is = scores.index();
  return t.make(std::move(p), t.requires_grad(is), [is](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& p = t.value(self);
    Matrix& gs = t.grad(is);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const double dot = g.row(r).dot(p.row(r));
      gs.row(r) += p.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
  });
}

Var log_softmax(Var a) {
  Tape& t = *a.tape();
  const Matrix& v = a.value();
  Matrix out(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mx = v.row(r).maxCoeff();
    const double lse = mx + std::log((v.row(r).array() - mx).exp().sum());
    out.row(r) = v.row(r).array() - lse;
  }
  const int ia = a.index();
  return t.make(std::move(out), t.requires_grad(ia), [ia](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad(ia);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double gs = g.row(r).sum();
      ga.row(r) += g.row(r) - (y.row(r).array().exp() * gs).matrix();
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = *table.tape();
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(tv.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  const int it = table.index();
  std::vector<int> idx(ids.begin(), ids.end());
  return t.make(std::move(out), t.requires_grad(it), [it, idx = std::move(idx)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& gt = t.grad(it);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = *a.tape();
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols out of range");
  const int ia = a.index();
  return t.make(a.value().middleCols(start, count), t.requires_grad(ia),
                [ia, start, count](Tape& t, int self) {
                  t.grad(ia).middleCols(start, count) += t.grad(self);
                });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = *parts[0].tape();
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  bool rg = false;
  std::vector<int> idx;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
    rg = rg || t.requires_grad(p.index());
    idx.push_back(p.index());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return t.make(std::move(out), rg, [idx = std::move(idx)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index at = 0;
    for (int i : idx) {
      const auto c = t.value(i).cols();
      if (t.requires_grad(i)) t.grad(i) += g.middleCols(at, c);
      at += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = *parts[0].tape();
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  bool rg = false;
  std::vector<int> idx;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
    rg = rg || t.requires_grad(p.index());
    idx.push_back(p.index());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return t.make(std::move(out), rg, [idx = std::move(idx)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index at = 0;
    for (int i : idx) {
      const auto r = t.value(i).rows();
      if (t.requires_grad(i)) t.grad(i) += g.middleRows(at, r);
      at += r;
    }
  });
}

Var pick(Var a, std::span<const std::pair<int, int>> coords) {
  Tape& t = *a.tape();
  const Matrix& v = a.value();
  Matrix out(static_cast<Eigen::Index>(coords.size()), 1);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto [r, c] = coords[i];
    if (r < 0 || r >= v.rows() || c < 0 || c >= v.cols()) throw ShapeError("pick: index out of range");
    out(static_cast<Eigen::Index>(i), 0) = v(r, c);
  }
  const int ia = a.index();
  std::vector<std::pair<int, int>> cs(coords.begin(), coords.end());
  return t.make(std::move(out), t.requires_grad(ia), [ia, cs = std::move(cs)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < cs.size(); ++i) ga(cs[i].first, cs[i].second) += g(static_cast<Eigen::Index>(i), 0);
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.index();
  return t.make(std::move(out), t.requires_grad(ia), [ia](Tape& t, int self) {
    t.grad(ia).array() += t.grad(self)(0, 0);
  });
}

Var sum(std::span<const Var> scalars) {
  if (scalars.empty()) throw ShapeError("sum: no inputs");
  return sum(concat_rows(scalars));
}

Var dot_const(Var a, const Matrix& weights) {
  Tape& t = *a.tape();
  if (weights.rows() != a.rows() || weights.cols() != a.cols()) {
    throw ShapeError("dot_const: shape mismatch");
  }
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  const int ia = a.index();
  return t.make(std::move(out), t.requires_grad(ia), [ia, weights](Tape& t, int self) {
    t.grad(ia) += weights * t.grad(self)(0, 0);
  });
}

}  // namespace simt::ad
