#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace simt {
class Rng;
}

namespace simt::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

  Tape* tape() const { return tape_; }
  int index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  int index_ = -1;
};

/// Records a computation as a list of nodes and replays it backwards.
/// Nodes are appended in evaluation order, so reverse order is a valid
/// topological order for the backward sweep.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  /// Value that never receives a gradient.
  Var constant(Matrix value);
  /// Differentiable input; its gradient is readable after backward().
  Var leaf(Matrix value);
  /// Result of an op. `requires_grad` is the OR of the inputs' flags; the
  /// backward closure is dropped when it is false.
  Var make(Matrix value, bool requires_grad, Backward backward);

  /// Reverse sweep from a 1x1 root. May be called once per tape.
  void backward(Var root);

  const Matrix& value(int node) const { return nodes_[static_cast<std::size_t>(node)].value; }
  bool requires_grad(int node) const { return nodes_[static_cast<std::size_t>(node)].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.index()); }

  /// Gradient accumulator, zero-initialised on first access.
  Matrix& grad(int node);
  /// Gradient if one was accumulated, else nullptr.
  const Matrix* grad_if_any(int node) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(Var a, Var b);     // a * b
Var matmul_nt(Var a, Var b);  // a * b^T
Var transpose(Var a);
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1xN row over every row of a
Var scale(Var a, double s);
Var relu(Var a);
Var exp(Var a);
/// Inverted dropout with keep probability 1 - p; identity when p == 0.
Var dropout(Var a, double p, Rng& rng);

/// Row-wise layer normalisation with learned gain/bias rows.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-6);

/// Row-wise softmax where row r may only attend to columns [0, limits[r]).
/// Masked entries are exactly zero.
Var masked_softmax(Var scores, std::span<const int> limits);
Var log_softmax(Var a);

// Indexing and reshaping.
Var gather_rows(Var table, std::span<const int> ids);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Column vector of a(r, c) for each (r, c).
Var pick(Var a, std::span<const std::pair<int, int>> coords);

// Reductions.
Var sum(Var a);
Var sum(std::span<const Var> scalars);
/// sum(a .* weights) for a constant weight matrix.
Var dot_const(Var a, const Matrix& weights);

}  // namespace simt::ad
