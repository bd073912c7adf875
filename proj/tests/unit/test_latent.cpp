#include <cmath>
#include <sstream>

#include "doctest.h"
#include "embscale/latent.hpp"
#include "embscale/procgen.hpp"

using namespace embscale;

namespace {

UrmaConfig tiny() {
  UrmaConfig c;
  c.heads = 2;
  c.latent_dim = 4;
  c.encoder_hidden = 8;
  c.general_dim = 8;
  c.core_hidden = {8};
  c.action_latent_dim = 6;
  c.action_desc_hidden = 8;
  c.action_desc_dim = 4;
  c.decoder_hidden = {8};
  return c;
}

}  // namespace

TEST_SUITE("latent") {

TEST_CASE("pca of a known plane") {
  // Points on a plane spanned by two orthogonal directions with variances 9 and 1.
  Matrix m(4, 3);
  m << 3, 0, 0,
       -3, 0, 0,
       0, 1, 0,
       0, -1, 0;
  m.rowwise() += Eigen::RowVector3d(1, 2, 3);
  const PcaResult p = pca_project(m, 2);
  CHECK(p.explained[0] == doctest::Approx(0.9));
  CHECK(p.explained[1] == doctest::Approx(0.1));
  CHECK(p.mean == Vec3(1, 2, 3));
  CHECK(std::abs(p.components(0, 0)) == doctest::Approx(1.0));
  CHECK(p.components(0, 0) > 0.0);
  CHECK(p.coords(0, 0) == doctest::Approx(3.0));
  CHECK((pca_reconstruct(p) - m).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("pca invariants on random data") {
  Rng rng(1);
  Matrix m(30, 6);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  const PcaResult p = pca_project(m, 3);
  CHECK((p.components.transpose() * p.components - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(p.explained[0] >= p.explained[1]);
  CHECK(p.explained[1] >= p.explained[2]);
  CHECK(p.explained.sum() <= 1.0 + 1e-12);
  CHECK(p.coords.colwise().mean().cwiseAbs().maxCoeff() <= 1e-12);
  const PcaResult full = pca_project(m, 6);
  CHECK(full.explained.sum() == doctest::Approx(1.0));
  // Column-wise variance of the coordinates equals the explained share of the total.
  const Matrix c = m.rowwise() - m.colwise().mean();
  const double total = c.squaredNorm();
  for (int k = 0; k < 3; ++k) CHECK(p.coords.col(k).squaredNorm() / total == doctest::Approx(p.explained[k]));
}

TEST_CASE("pca input validation") {
  CHECK_THROWS_AS(pca_project(Matrix::Zero(1, 3), 1), ShapeMismatch);
  CHECK_THROWS_AS(pca_project(Matrix::Random(5, 3), 4), ShapeMismatch);
  CHECK_THROWS_AS(pca_project(Matrix::Ones(5, 3), 2), DegenerateInput);
  Matrix nan = Matrix::Random(5, 3);
  nan(2, 1) = std::nan("");
  CHECK_THROWS_AS(pca_project(nan, 2), DegenerateInput);
}

TEST_CASE("latent csv round-trips") {
  LatentMatrix m;
  m.labels = {{"quadruped_0001", "quadruped", 1, "knees=1;all=1.1"}, {"hexapod_0002", "hexapod", 2, "knees=2;all=0.9"}};
  m.values = Matrix(2, 3);
  m.values << 0.1, -2.5, 1.0 / 3.0, 4e-17, 7.0, -0.0;
  std::stringstream ss;
  write_latent_csv(ss, m);
  CHECK(ss.str().rfind("id,class,knee_count,tags,z_1,z_2,z_3\n", 0) == 0);
  const LatentMatrix back = read_latent_csv(ss);
  CHECK(back.labels == m.labels);
  CHECK(back.values == m.values);
  LatentMatrix bad = m;
  bad.labels[0].tags = "a,b";
  std::ostringstream sink;
  CHECK_THROWS_AS(write_latent_csv(sink, bad), ShapeMismatch);
}

TEST_CASE("latents from a network") {
  std::vector<Embodiment> es;
  for (auto c : {MorphologyClass::kQuadruped, MorphologyClass::kHexapod, MorphologyClass::kHumanoid}) {
    es.push_back(build_embodiment(c, reference_variation(c), BaseUnitTable::reference(), std::string(to_string(c))));
  }
  const UrmaNetwork net(tiny());
  const Vector p = net.init_params(2);
  const LatentMatrix a = action_latents(net, as_span(p), es, EnvConfig{}, 5, 3);
  CHECK(a.values.rows() == 3);
  CHECK(a.values.cols() == 6);
  CHECK(a.labels[1].cls == "hexapod");
  CHECK(a.labels[0].tags.find("knees=1") == 0);
  const LatentMatrix again = action_latents(net, as_span(p), es, EnvConfig{}, 5, 3);
  CHECK(again.values == a.values);
  CHECK(pca_project(a.values, 2).coords.rows() == 3);

  const LatentMatrix d = description_latents(net, as_span(p), es, 1);
  CHECK(d.values.rows() == 12 + 18 + es[2].num_actuated());
  CHECK(d.values.cols() == 4);
  CHECK(d.labels[0].id.rfind("quadruped/", 0) == 0);
  CHECK_THROWS_AS(action_latents(net, as_span(p), es, EnvConfig{}, 0), ShapeMismatch);
}

}
