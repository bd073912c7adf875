#include <cmath>
#include <utility>

#include "doctest.h"
#include "embscale/nn.hpp"
#include "embscale/urdf.hpp"
#include "support.hpp"

using namespace embscale;

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("layout packs tensors back to back") {
  ParamLayout l;
  CHECK(l.add("a", 2, 3) == 0);
  CHECK(l.add("b", 4, 1) == 6);
  CHECK(l.size() == 10);
  CHECK(l[1].name == "b");
}

TEST_CASE("elu and its derivative") {
  Matrix x(1, 3);
  x << -1.0, 0.0, 2.0;
  Matrix y = x;
  elu_inplace(y);
  CHECK(y(0, 0) == doctest::Approx(std::exp(-1.0) - 1.0));
  CHECK(y(0, 1) == 0.0);
  CHECK(y(0, 2) == 2.0);
  Matrix dy = Matrix::Ones(1, 3);
  elu_backward_inplace(dy, y);
  CHECK(dy(0, 0) == doctest::Approx(std::exp(-1.0)));
  CHECK(dy(0, 2) == 1.0);
}

TEST_CASE("mlp init respects the fan-in bound") {
  ParamLayout l;
  Mlp m(l, "m", {10, 7, 3});
  Vector p = Vector::Zero(static_cast<Eigen::Index>(l.size()));
  Rng rng(1);
  m.init(as_span(p), rng);
  const auto w0 = tensor(as_span(std::as_const(p)), l[0].offset, l[0].rows, l[0].cols);
  CHECK(w0.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(10.0));
  CHECK(w0.cwiseAbs().maxCoeff() > 0.5 / std::sqrt(10.0));
  CHECK(m.in_dim() == 10);
  CHECK(m.out_dim() == 3);
  CHECK_THROWS_AS(m.forward(as_span(std::as_const(p)), Matrix::Zero(9, 1)), ShapeMismatch);
}

TEST_CASE("mlp backward matches finite differences") {
  ParamLayout l;
  Mlp m(l, "m", {4, 6, 5, 2});
  Vector p = Vector::Zero(static_cast<Eigen::Index>(l.size()));
  Rng rng(3);
  m.init(as_span(p), rng);
  const Matrix x = random_matrix(4, 3, rng);
  const Matrix w = random_matrix(2, 3, rng);
  auto loss = [&](const Vector& q) { return m.forward(as_span(q), x).cwiseProduct(w).sum(); };

  Mlp::Cache cache;
  m.forward(as_span(std::as_const(p)), x, &cache);
  Vector g = Vector::Zero(p.size());
  const Matrix dx = m.backward(as_span(std::as_const(p)), cache, w, as_span(g));
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Vector a = p, b = p;
    a[i] += h;
    b[i] -= h;
    CHECK(g[i] == doctest::Approx((loss(a) - loss(b)) / (2 * h)).epsilon(1e-6));
  }
  // input gradient
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Matrix xa = x, xb = x;
    xa.data()[i] += h;
    xb.data()[i] -= h;
    const double fd = (m.forward(as_span(std::as_const(p)), xa).cwiseProduct(w).sum() -
                       m.forward(as_span(std::as_const(p)), xb).cwiseProduct(w).sum()) / (2 * h);
    CHECK(dx.data()[i] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("gradient clipping") {
  Vector g(2);
  g << 3.0, 4.0;
  CHECK(clip_grad_norm(as_span(g), 1.0) == doctest::Approx(5.0));
  CHECK(g.norm() == doctest::Approx(1.0));
  CHECK(g[0] == doctest::Approx(0.6));
  Vector small(2);
  small << 0.1, 0.0;
  clip_grad_norm(as_span(small), 1.0);
  CHECK(small[0] == 0.1);
}

TEST_CASE("adam first step moves every coordinate by lr") {
  Adam opt(3);
  Vector p = Vector::Zero(3);
  Vector g(3);
  g << 2.0, -0.5, 1e-3;
  opt.step(as_span(p), as_span(std::as_const(g)), 0.1);
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(p[2] == doctest::Approx(-0.1).epsilon(1e-4));
  CHECK(opt.steps() == 1);
}

TEST_CASE("adamw decay is decoupled") {
  Adam opt(1);
  Vector p = Vector::Constant(1, 2.0);
  const Vector zero = Vector::Zero(1);
  opt.step(as_span(p), as_span(zero), 0.1, 0.5);
  CHECK(p[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  Vector q = Vector::Zero(2);
  CHECK_THROWS_AS(opt.step(as_span(q), as_span(zero), 0.1), ShapeMismatch);
}

TEST_CASE("adam minimises a quadratic") {
  Adam opt(2);
  Vector p(2);
  p << 3.0, -2.0;
  for (int i = 0; i < 2000; ++i) {
    const Vector g = 2.0 * p;
    opt.step(as_span(p), as_span(g), 0.01);
  }
  CHECK(p.norm() < 1e-2);
}

TEST_CASE("checkpoints round-trip through f32") {
  embscale::testing::TempDir dir("nn");
  ParamLayout l;
  l.add("w", 3, 2);
  l.add("b", 3, 1);
  Vector p(9);
  for (int i = 0; i < 9; ++i) p[i] = 0.25 * i - 1.0;
  save_checkpoint(dir.file("x.ckpt"), "test", "cfg=1", l, as_span(std::as_const(p)));
  const Checkpoint ck = load_checkpoint(dir.file("x.ckpt"));
  CHECK(ck.kind == "test");
  CHECK(ck.config == "cfg=1");
  REQUIRE(ck.tensors.size() == 2);
  Vector back = Vector::Zero(9);
  assign_checkpoint(ck, l, as_span(back));
  CHECK(back == p);

  ParamLayout other;
  other.add("w", 2, 3);
  other.add("b", 3, 1);
  CHECK_THROWS_AS(assign_checkpoint(ck, other, as_span(back)), ShapeMismatch);
  embscale::write_text_file(dir.file("junk.ckpt"), "definitely not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(dir.file("junk.ckpt")), IoError);
}

}
