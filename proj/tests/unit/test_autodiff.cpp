#include <doctest.h>

#include <cmath>
#include <functional>

#include "simt/autodiff.hpp"
#include "simt/random.hpp"

using namespace simt;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

using Builder = std::function<Var(Tape&, std::vector<Var>&)>;

Matrix random_matrix(Rng& rng, int r, int c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

double eval(const Builder& f, const std::vector<Matrix>& inputs) {
  Tape t;
  std::vector<Var> vs;
  for (const auto& m : inputs) vs.push_back(t.constant(m));
  return f(t, vs).scalar();
}

// Max relative error between reverse-mode and central-difference gradients.
double check(const Builder& f, std::vector<Matrix> inputs, double h = 1e-6) {
  Tape t;
  std::vector<Var> vs;
  for (const auto& m : inputs) vs.push_back(t.leaf(m));
  Var y = f(t, vs);
  t.backward(y);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix g = t.grad(vs[k].index());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k].data()[i];
      inputs[k].data()[i] = orig + h;
      const double up = eval(f, inputs);
      inputs[k].data()[i] = orig - h;
      const double down = eval(f, inputs);
      inputs[k].data()[i] = orig;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - g.data()[i]) / std::max({std::abs(fd), std::abs(g.data()[i]), 1e-6}));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("elementary op gradients match finite differences") {
  Rng rng(7);
  const Matrix w = random_matrix(rng, 3, 4);
  const Matrix a = random_matrix(rng, 3, 5), b = random_matrix(rng, 5, 4), c = random_matrix(rng, 4, 5);
  const Matrix row = random_matrix(rng, 1, 4);

  CHECK(check([&](Tape&, auto& v) { return ad::dot_const(ad::matmul(v[0], v[1]), w); }, {a, b}) < 1e-6);
  CHECK(check([&](Tape&, auto& v) { return ad::dot_const(ad::matmul_nt(v[0], v[1]), w); }, {a, c}) < 1e-6);
  CHECK(check([&](Tape&, auto& v) { return ad::dot_const(ad::transpose(v[0]), w.transpose()); },
              {random_matrix(rng, 3, 4)}) < 1e-6);
  CHECK(check([&](Tape&, auto& v) { return ad::dot_const(ad::add_row(v[0], v[1]), w); },
              {random_matrix(rng, 3, 4), row}) < 1e-6);
  CHECK(check([&](Tape&, auto& v) { return ad::dot_const(ad::scale(ad::add(v[0], v[1]), 2.5), w); },
              {random_matrix(rng, 3, 4), random_matrix(rng, 3, 4)}) < 1e-6);
  CHECK(check([&](Tape&, auto& v) { return ad::dot_const(ad::exp(v[0]), w); }, {random_matrix(rng, 3, 4)}) <
        1e-6);
  CHECK(check([&](Tape&, auto& v) { return ad::dot_const(ad::log_softmax(v[0]), w); },
              {random_matrix(rng, 3, 4)}) < 1e-6);
}

TEST_CASE("relu gradient away from the kink") {
  Matrix x(2, 2);
  x << 0.5, -0.5, 1.5, -2.0;
  Matrix w(2, 2);
  w << 1, 2, 3, 4;
  CHECK(check([&](Tape&, auto& v) { return ad::dot_const(ad::relu(v[0]), w); }, {x}) < 1e-8);
}

TEST_CASE("layer norm and masked softmax gradients") {
  Rng rng(11);
  const Matrix w = random_matrix(rng, 3, 5);
  const std::vector<int> limits{1, 3, 5};
  CHECK(check([&](Tape&, auto& v) { return ad::dot_const(ad::layer_norm(v[0], v[1], v[2]), w); },
              {random_matrix(rng, 3, 5), random_matrix(rng, 1, 5), random_matrix(rng, 1, 5)}) < 1e-5);
  CHECK(check([&](Tape&, auto& v) { return ad::dot_const(ad::masked_softmax(v[0], limits), w); },
              {random_matrix(rng, 3, 5)}) < 1e-6);
}

TEST_CASE("masked softmax zeros masked entries exactly") {
  Tape t;
  Matrix s(2, 3);
  s << 1, 2, 3, 4, 5, 6;
  const std::vector<int> limits{1, 2};
  const Matrix p = ad::masked_softmax(t.constant(s), limits).value();
  CHECK(p(0, 0) == 1.0);
  CHECK(p(0, 1) == 0.0);
  CHECK(p(1, 2) == 0.0);
  CHECK(p.row(1).sum() == doctest::Approx(1.0));
}

TEST_CASE("indexing op gradients") {
  Rng rng(3);
  const std::vector<int> ids{2, 0, 2};
  const Matrix w = random_matrix(rng, 3, 4);
  CHECK(check([&](Tape&, auto& v) { return ad::dot_const(ad::gather_rows(v[0], ids), w); },
              {random_matrix(rng, 4, 4)}) < 1e-6);
  CHECK(check([&](Tape&, auto& v) { return ad::dot_const(ad::slice_cols(v[0], 1, 2), w.leftCols(2)); },
              {random_matrix(rng, 3, 4)}) < 1e-6);
  CHECK(check(
            [&](Tape&, auto& v) {
              std::vector<Var> parts{v[0], v[1]};
              return ad::dot_const(ad::concat_cols(parts), w);
            },
            {random_matrix(rng, 3, 1), random_matrix(rng, 3, 3)}) < 1e-6);
  CHECK(check(
            [&](Tape&, auto& v) {
              std::vector<Var> parts{v[0], v[1]};
              return ad::dot_const(ad::concat_rows(parts), w);
            },
            {random_matrix(rng, 1, 4), random_matrix(rng, 2, 4)}) < 1e-6);
  const std::vector<std::pair<int, int>> coords{{0, 1}, {2, 3}, {0, 1}};
  CHECK(check([&](Tape&, auto& v) { return ad::sum(ad::exp(ad::pick(v[0], coords))); },
              {random_matrix(rng, 3, 4)}) < 1e-6);
  CHECK(check(
            [&](Tape&, auto& v) {
              std::vector<Var> s{ad::sum(v[0]), ad::sum(ad::exp(v[0]))};
              return ad::sum(s);
            },
            {random_matrix(rng, 2, 2)}) < 1e-6);
}

TEST_CASE("constants receive no gradient and shared nodes accumulate") {
  Tape t;
  Var a = t.leaf(Matrix::Constant(1, 1, 3.0));
  Var c = t.constant(Matrix::Constant(1, 1, 2.0));
  Var y = ad::add(ad::matmul(a, a), ad::matmul(a, c));
  t.backward(y);
  CHECK(t.grad(a.index())(0, 0) == doctest::Approx(8.0));
  CHECK(t.grad_if_any(c.index()) == nullptr);
}

TEST_CASE("dropout") {
  Rng rng(1);
  Tape t;
  const Matrix x = Matrix::Ones(20, 20);
  CHECK(ad::dropout(t.constant(x), 0.0, rng).value() == x);
  const Matrix d = ad::dropout(t.constant(x), 0.5, rng).value();
  for (Eigen::Index i = 0; i < d.size(); ++i) CHECK((d.data()[i] == 0.0 || d.data()[i] == 2.0));
}
