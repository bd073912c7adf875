#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "embscale/urma.hpp"
#include "support.hpp"

using namespace embscale;

namespace {

UrmaConfig tiny(SoftmaxAxis axis = SoftmaxAxis::kJoints) {
  UrmaConfig c;
  c.heads = 2;
  c.latent_dim = 4;
  c.encoder_hidden = 5;
  c.general_dim = 6;
  c.core_hidden = {7};
  c.action_latent_dim = 5;
  c.action_desc_hidden = 4;
  c.action_desc_dim = 3;
  c.decoder_hidden = {6};
  c.softmax_axis = axis;
  return c;
}

UrmaInput random_input(int J, int B, Rng& rng) {
  UrmaInput in;
  in.descriptors.resize(J, kJointDescriptorDim);
  in.general.resize(kGeneralObservationDim, B);
  in.joint_obs.resize(kJointObservationDim, static_cast<Eigen::Index>(B) * J);
  for (auto* m : {&in.descriptors, &in.general, &in.joint_obs}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = rng.normal();
  }
  return in;
}

UrmaInput permuted(const UrmaInput& in, const std::vector<int>& perm) {
  UrmaInput out = in;
  const int J = in.joints();
  for (int j = 0; j < J; ++j) {
    out.descriptors.row(j) = in.descriptors.row(perm[static_cast<std::size_t>(j)]);
    for (int b = 0; b < in.batch(); ++b) {
      out.joint_obs.col(static_cast<Eigen::Index>(b) * J + j) =
          in.joint_obs.col(static_cast<Eigen::Index>(b) * J + perm[static_cast<std::size_t>(j)]);
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("urma") {

TEST_CASE("initialisation is deterministic with unit temperatures") {
  const UrmaNetwork net(tiny());
  const Vector a = net.init_params(5), b = net.init_params(5), c = net.init_params(6);
  CHECK(a == b);
  CHECK(a != c);
  for (int h = 0; h < 2; ++h) CHECK(net.temperature(as_span(a), h) == 1.0);
}

TEST_CASE("parameter counts") {
  const UrmaNetwork ref{UrmaConfig{}};
  CHECK(std::abs(static_cast<double>(ref.num_params()) - 2.1e6) <= 0.1 * 2.1e6);
  UrmaConfig one;
  one.heads = 1;
  CHECK(UrmaNetwork(one).num_params() < ref.num_params());
}

TEST_CASE("config text round-trip") {
  UrmaConfig c = tiny(SoftmaxAxis::kLatent);
  CHECK(UrmaConfig::from_text(c.to_text()) == c);
  CHECK(UrmaConfig::from_text(UrmaConfig{}.to_text()) == UrmaConfig{});
  CHECK_THROWS_AS(UrmaConfig::from_text("heads=2 colour=blue"), ParseError);
}

TEST_CASE("a single joint receives all the attention") {
  const UrmaNetwork net(tiny());
  const Vector p = net.init_params(1);
  Rng rng(2);
  const UrmaOutput out = net.forward(as_span(p), random_input(1, 3, rng));
  for (const auto& w : out.latents.weights) CHECK(w.isApprox(Matrix::Ones(4, 1), 1e-15));
}

TEST_CASE("softmax weights are normalised along the chosen axis") {
  Rng rng(3);
  for (auto axis : {SoftmaxAxis::kJoints, SoftmaxAxis::kLatent}) {
    const UrmaNetwork net(tiny(axis));
    const Vector p = net.init_params(2);
    const UrmaOutput out = net.forward(as_span(p), random_input(5, 2, rng));
    for (const auto& w : out.latents.weights) {
      CHECK(w.minCoeff() > 0.0);
      const Vector sums = axis == SoftmaxAxis::kJoints ? Vector(w.rowwise().sum()) : Vector(w.colwise().sum().transpose());
      CHECK((sums.array() - 1.0).abs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("pooled latents are the exact sum of joint latents") {
  const UrmaNetwork net(tiny());
  const Vector p = net.init_params(4);
  Rng rng(4);
  const int J = 4, B = 3;
  const UrmaOutput out = net.forward(as_span(p), random_input(J, B, rng));
  for (std::size_t h = 0; h < out.latents.pooled.size(); ++h) {
    for (int b = 0; b < B; ++b) {
      const Vector s = out.latents.joint_latents[h].middleCols(static_cast<Eigen::Index>(b) * J, J).rowwise().sum();
      CHECK(s == out.latents.pooled[h].col(b));
    }
  }
}

TEST_CASE("duplicated joints get identical actions") {
  const UrmaNetwork net(tiny());
  const Vector p = net.init_params(6);
  Rng rng(6);
  UrmaInput in = random_input(3, 2, rng);
  in.descriptors.row(2) = in.descriptors.row(0);
  for (int b = 0; b < 2; ++b) in.joint_obs.col(b * 3 + 2) = in.joint_obs.col(b * 3);
  const Matrix a = net.forward(as_span(p), in).actions;
  CHECK((a.row(2) - a.row(0)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("permuting joints permutes actions and keeps the action latent") {
  Rng rng(7);
  for (auto axis : {SoftmaxAxis::kJoints, SoftmaxAxis::kLatent}) {
    const UrmaNetwork net(tiny(axis));
    const Vector p = net.init_params(7);
    const UrmaInput in = random_input(3, 2, rng);
    const std::vector<int> perm = {2, 0, 1};
    const UrmaOutput a = net.forward(as_span(p), in);
    const UrmaOutput b = net.forward(as_span(p), permuted(in, perm));
    for (int j = 0; j < 3; ++j) {
      CHECK((b.actions.row(j) - a.actions.row(perm[static_cast<std::size_t>(j)])).cwiseAbs().maxCoeff() <= 1e-12);
    }
    CHECK((b.latents.action_latent - a.latents.action_latent).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("any joint count from 1 to 64 works with the same parameters") {
  const UrmaNetwork net(tiny());
  const Vector p = net.init_params(8);
  Rng rng(8);
  for (int J : {1, 2, 7, 19, 64}) {
    const UrmaOutput out = net.forward(as_span(p), random_input(J, 2, rng));
    CHECK(out.actions.rows() == J);
    CHECK(out.actions.cols() == 2);
    CHECK(out.actions.allFinite());
  }
}

TEST_CASE("shape errors") {
  const UrmaNetwork net(tiny());
  const Vector p = net.init_params(9);
  Rng rng(9);
  UrmaInput in = random_input(3, 2, rng);
  in.joint_obs.conservativeResize(Eigen::NoChange, 5);
  CHECK_THROWS_AS(net.forward(as_span(p), in), ShapeMismatch);
  in = random_input(3, 2, rng);
  in.descriptors.resize(0, kJointDescriptorDim);
  CHECK_THROWS_AS(net.forward(as_span(p), in), ShapeMismatch);
  in = random_input(3, 2, rng);
  CHECK_THROWS_AS(net.bc_loss(as_span(p), in, Matrix::Zero(2, 2)), ShapeMismatch);
}

TEST_CASE("bc loss closed forms") {
  const UrmaNetwork net(tiny());
  const Vector p = net.init_params(10);
  Rng rng(10);
  const UrmaInput in = random_input(2, 2, rng);
  const Matrix a = net.forward(as_span(p), in).actions;
  CHECK(net.bc_loss(as_span(p), in, a) == 0.0);
  CHECK(net.bc_loss(as_span(p), in, a.array() + 0.3) == doctest::Approx(0.09).epsilon(1e-12));
  Matrix t(2, 2);
  t << 0.5, -1.0, 2.0, 0.25;
  double expect = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) expect += (a(i, j) - t(i, j)) * (a(i, j) - t(i, j));
  }
  CHECK(net.bc_loss(as_span(p), in, t) == doctest::Approx(expect / 4).epsilon(1e-12));
}

TEST_CASE("gradients match central differences, temperatures included") {
  for (auto axis : {SoftmaxAxis::kJoints, SoftmaxAxis::kLatent}) {
    const UrmaNetwork net(tiny(axis));
    Rng rng(11);
    Vector p = net.init_params(11);
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += 0.1 * rng.normal();  // move temperatures off 1
    const UrmaInput in = random_input(3, 2, rng);
    Matrix t(3, 2);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
    Vector g = Vector::Zero(p.size());
    const double loss = net.loss_and_grad(as_span(std::as_const(p)), in, t, as_span(g));
    CHECK(loss == doctest::Approx(net.bc_loss(as_span(p), in, t)).epsilon(1e-14));
    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      Vector a = p, b = p;
      a[i] += h;
      b[i] -= h;
      const double fd = (net.bc_loss(as_span(a), in, t) - net.bc_loss(as_span(b), in, t)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - g[i]) / denom);
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("zero residual gives a zero gradient") {
  const UrmaNetwork net(tiny());
  const Vector p = net.init_params(12);
  Rng rng(12);
  const UrmaInput in = random_input(3, 2, rng);
  const Matrix a = net.forward(as_span(p), in).actions;
  Vector g = Vector::Ones(p.size());
  CHECK(net.loss_and_grad(as_span(p), in, a, as_span(g)) == 0.0);
  CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradient of a doubled batch equals the single-batch gradient") {
  const UrmaNetwork net(tiny());
  const Vector p = net.init_params(13);
  Rng rng(13);
  const UrmaInput in = random_input(3, 2, rng);
  Matrix t = Matrix::Random(3, 2);
  UrmaInput twice = in;
  twice.general.resize(kGeneralObservationDim, 4);
  twice.general << in.general, in.general;
  twice.joint_obs.resize(3, 12);
  twice.joint_obs << in.joint_obs, in.joint_obs;
  Matrix tt(3, 4);
  tt << t, t;
  Vector g1 = Vector::Zero(p.size()), g2 = Vector::Zero(p.size());
  net.loss_and_grad(as_span(p), in, t, as_span(g1));
  net.loss_and_grad(as_span(p), twice, tt, as_span(g2));
  CHECK((g1 - g2).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("non-finite loss is reported") {
  const UrmaNetwork net(tiny());
  const Vector p = net.init_params(14);
  Rng rng(14);
  const UrmaInput in = random_input(2, 1, rng);
  Matrix t = Matrix::Zero(2, 1);
  t(0, 0) = std::numeric_limits<double>::infinity();
  Vector g = Vector::Zero(p.size());
  CHECK_THROWS_AS(net.loss_and_grad(as_span(p), in, t, as_span(g)), NonFiniteLoss);
}

TEST_CASE("checkpoint round-trip") {
  embscale::testing::TempDir dir("urma");
  const UrmaNetwork net(tiny(SoftmaxAxis::kLatent));
  const Vector p = net.init_params(15);
  net.save(dir.file("s.ckpt"), as_span(p));
  Vector back;
  const UrmaNetwork loaded = UrmaNetwork::load(dir.file("s.ckpt"), back);
  CHECK(loaded.config() == net.config());
  CHECK((back - p).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(back == back.cast<float>().cast<double>());
}

TEST_CASE("general observation layout") {
  GeneralDescriptor g;
  for (int i = 0; i < kGeneralDescriptorDim; ++i) g[static_cast<std::size_t>(i)] = 10.0 + i;
  const auto o = general_observation(Vec3(1, 2, 3), Vec3(4, 5, 6), Vec3(7, 8, 9), g);
  for (int i = 0; i < 9; ++i) CHECK(o[i] == i + 1.0);
  for (int i = 0; i < kGeneralDescriptorDim; ++i) CHECK(o[9 + i] == 10.0 + i);
  CHECK(o[18] == 0.0);
  CHECK(o[19] == 0.0);
}

}
