#include <cmath>
#include <sstream>

#include "doctest.h"
#include "embscale/ppo.hpp"
#include "embscale/procgen.hpp"
#include "support.hpp"

using namespace embscale;

namespace {

// Direct sum of discounted TD residuals up to the end of the episode.
Vector naive_advantages(const Vector& r, const Vector& v, const std::vector<bool>& dones, double last, double g,
                        double l) {
  const Eigen::Index n = r.size();
  Vector a = Vector::Zero(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    double w = 1.0;
    for (Eigen::Index u = t; u < n; ++u) {
      const bool end = dones[static_cast<std::size_t>(u)];
      const double next = end ? 0.0 : (u + 1 < n ? v[u + 1] : last);
      a[t] += w * (r[u] + g * next - v[u]);
      if (end) break;
      w *= g * l;
    }
  }
  return a;
}

ExpertSpec tiny_spec() {
  ExpertSpec s;
  s.obs_dim = 3;
  s.critic_dim = 4;
  s.joints = 2;
  s.hidden = {6, 5};
  s.init_std = 0.7;
  return s;
}

PpoBatch make_batch(const ExpertNetwork& net, const Vector& old, int m, Rng& rng) {
  PpoBatch b;
  const int J = net.spec().joints;
  b.obs = Matrix(net.spec().obs_dim, m);
  b.critic_obs = Matrix(net.spec().critic_dim, m);
  for (Eigen::Index i = 0; i < b.obs.size(); ++i) b.obs.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < b.critic_obs.size(); ++i) b.critic_obs.data()[i] = rng.normal();
  b.mean_old = net.action_mean(as_span(old), b.obs);
  b.log_std_old = net.log_std(as_span(old));
  b.actions = Matrix(J, m);
  b.log_prob_old = Vector(m);
  b.advantages = Vector(m);
  b.returns = Vector(m);
  for (int s = 0; s < m; ++s) {
    for (int j = 0; j < J; ++j) b.actions(j, s) = b.mean_old(j, s) + std::exp(b.log_std_old[j]) * rng.normal();
    b.log_prob_old[s] = gaussian_log_prob(b.actions.col(s), b.mean_old.col(s), b.log_std_old);
    b.advantages[s] = rng.normal();
    b.returns[s] = rng.normal();
  }
  return b;
}

}  // namespace

TEST_SUITE("ppo") {

TEST_CASE("gae matches the direct residual sum") {
  Rng rng(1);
  const int n = 40;
  Vector r(n), v(n);
  std::vector<bool> dones(n);
  for (int t = 0; t < n; ++t) {
    r[t] = rng.normal();
    v[t] = rng.normal();
    dones[static_cast<std::size_t>(t)] = rng.bernoulli(0.1);
  }
  for (auto [g, l] : {std::pair{0.99, 0.95}, std::pair{1.0, 1.0}, std::pair{0.9, 0.0}}) {
    const GaeResult res = gae(r, v, dones, 0.37, g, l);
    const Vector expect = naive_advantages(r, v, dones, 0.37, g, l);
    CHECK((res.advantages - expect).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((res.returns - res.advantages - v).cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK_THROWS_AS(gae(r, v.head(3), dones, 0.0), ShapeMismatch);
}

TEST_CASE("gae worked example") {
  Vector r(3), v(3);
  r << 1.0, 1.0, 1.0;
  v << 0.0, 0.0, 0.0;
  const GaeResult res = gae(r, v, {false, true, false}, 10.0, 0.5, 1.0);
  CHECK(res.advantages[0] == doctest::Approx(1.5));
  CHECK(res.advantages[1] == doctest::Approx(1.0));
  CHECK(res.advantages[2] == doctest::Approx(6.0));
}

TEST_CASE("gaussian log-probability") {
  Vector a(2), m(2), ls(2);
  a << 0.5, -1.0;
  m << 0.0, 0.0;
  ls << 0.0, std::log(2.0);
  const double expect = -0.5 * 0.25 - 0.5 * std::log(2.0 * M_PI) + (-0.5 * 0.25 - std::log(2.0) - 0.5 * std::log(2.0 * M_PI));
  CHECK(gaussian_log_prob(a, m, ls) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("adaptive learning rate") {
  CHECK(adapt_learning_rate(1e-3, 0.03, 0.01, 1e-5, 1e-2) == doctest::Approx(5e-4));
  CHECK(adapt_learning_rate(1e-3, 0.004, 0.01, 1e-5, 1e-2) == doctest::Approx(2e-3));
  CHECK(adapt_learning_rate(1e-3, 0.01, 0.01, 1e-5, 1e-2) == 1e-3);
  CHECK(adapt_learning_rate(1.5e-5, 1.0, 0.01, 1e-5, 1e-2) == 1e-5);
  CHECK(adapt_learning_rate(8e-3, 0.0, 0.01, 1e-5, 1e-2) == 1e-2);
  CHECK(adapt_learning_rate(0.0, 0.0, 0.01, 1e-5, 1e-2) == 0.0);
}

TEST_CASE("loss at the old parameters") {
  const ExpertNetwork net(tiny_spec());
  const Vector p = net.init_params(3);
  Rng rng(4);
  const PpoBatch b = make_batch(net, p, 32, rng);
  PpoConfig cfg;
  std::vector<double> g(net.num_params());
  const PpoLossStats st = ppo_loss_and_grad(net, as_span(p), b, cfg, g);
  CHECK(st.kl == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(st.clip_fraction == 0.0);
  CHECK(st.policy_loss == doctest::Approx(-b.advantages.mean()).epsilon(1e-12));
  CHECK(st.entropy == doctest::Approx(2.0 * std::log(0.7) + (std::log(2.0 * M_PI) + 1.0)));
}

TEST_CASE("loss gradient matches finite differences") {
  const ExpertNetwork net(tiny_spec());
  const Vector old = net.init_params(5);
  Rng rng(6);
  const PpoBatch b = make_batch(net, old, 16, rng);
  Vector p = old;
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += 0.01 * rng.normal();
  PpoConfig cfg;
  cfg.clip = 10.0;  // keep every sample on the smooth branch
  std::vector<double> g(net.num_params()), scratch(net.num_params());
  ppo_loss_and_grad(net, as_span(p), b, cfg, g);
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Vector a = p, c = p;
    a[i] += h;
    c[i] -= h;
    const double fd = (ppo_loss_and_grad(net, as_span(a), b, cfg, scratch).loss -
                       ppo_loss_and_grad(net, as_span(c), b, cfg, scratch).loss) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - g[static_cast<std::size_t>(i)]) / (1.0 + std::abs(fd)));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("action means are clipped") {
  ExpertSpec s = tiny_spec();
  const ExpertNetwork net(s);
  Vector p = net.init_params(7);
  p *= 300.0;
  Matrix obs = Matrix::Constant(3, 4, 5.0);
  CHECK(net.action_mean(as_span(p), obs).cwiseAbs().maxCoeff() <= kActionMeanClip);
}

TEST_CASE("spec text and policy files round-trip") {
  const ExpertSpec s = tiny_spec();
  CHECK(ExpertSpec::from_text(s.to_text()) == s);
  testing::TempDir dir("ppo");
  ExpertPolicy pol{ExpertNetwork(s), ExpertNetwork(s).init_params(8), "quadruped_0003"};
  pol.save(dir.file("e.ckpt"));
  const ExpertPolicy back = ExpertPolicy::load(dir.file("e.ckpt"));
  CHECK(back.embodiment_id == "quadruped_0003");
  CHECK(back.net.spec() == s);
  const Vector rounded = pol.params.cast<float>().cast<double>();
  CHECK(back.params == rounded);
}

TEST_CASE("training loop smoke") {
  const Embodiment e = build_embodiment(MorphologyClass::kQuadruped, reference_variation(MorphologyClass::kQuadruped));
  PpoConfig cfg;
  cfg.num_envs = 2;
  cfg.steps_per_env = 8;
  cfg.minibatch = 8;
  cfg.epochs = 1;
  cfg.iterations = 3;
  cfg.hidden = {16};
  cfg.eval_interval = 5;
  cfg.eval_episodes = 1;
  cfg.eval_steps = 10;
  int calls = 0;
  const TrainResult r = train_expert(e, EnvConfig{}, cfg, [&](const IterationStats&) { ++calls; });
  CHECK(calls == 3);
  REQUIRE(r.curve.size() == 3);
  CHECK(r.curve[0].evaluated);
  CHECK_FALSE(r.curve[1].evaluated);
  CHECK(r.curve[2].evaluated);
  CHECK(std::isfinite(r.best_eval.mean_episode_reward));
  CHECK(r.best.params.allFinite());
  std::ostringstream csv;
  write_training_csv(csv, r.curve);
  CHECK(csv.str().rfind("iteration,mean_reward", 0) == 0);

  PpoConfig bad = cfg;
  bad.minibatch = 0;
  CHECK_THROWS(bad.validate());
}

}
