#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "embscale/scaling.hpp"
#include "support.hpp"

using namespace embscale;

namespace {

std::vector<Embodiment> pool_of(MorphologyClass c, int n, int offset = 0) {
  const auto vars = enumerate_variations(c);
  std::vector<Embodiment> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(build_embodiment(c, vars[static_cast<std::size_t>(offset + 37 * i) % vars.size()],
                                   BaseUnitTable::reference(), std::string(to_string(c)) + "_" + std::to_string(offset + i)));
  }
  return out;
}

ExpertPolicy random_expert(const Embodiment& e, std::uint64_t seed) {
  const SurrogateEnv env(e);
  ExpertSpec s;
  s.obs_dim = env.expert_obs_dim();
  s.critic_dim = env.critic_obs_dim();
  s.joints = env.num_joints();
  s.hidden = {8};
  const ExpertNetwork net(s);
  return {net, net.init_params(seed), e.id};
}

}  // namespace

TEST_SUITE("scaling") {

TEST_CASE("standard command schedule") {
  const auto s = CommandSchedule::standard();
  CHECK(s.at(0) == Vec3(0.5, 0.0, 0.0));
  CHECK(s.at(49) == Vec3(0.5, 0.0, 0.0));
  CHECK(s.at(50) == Vec3(-0.5, 0.0, 0.0));
  CHECK(s.at(120) == Vec3(0.0, 0.3, 0.0));
  CHECK(s.at(199) == Vec3(0.0, 0.0, 0.5));
  CHECK(s.at(200) == s.at(0));
  CHECK(CommandSchedule::zero().at(77) == Vec3::Zero());
}

TEST_CASE("aggregate uses the population deviation") {
  EvalResult r;
  r.rows = {{"a", MorphologyClass::kHumanoid, 1.0, 0, 0}, {"b", MorphologyClass::kQuadruped, 3.0, 0, 0},
            {"c", MorphologyClass::kQuadruped, 5.0, 0, 0}};
  r.aggregate();
  CHECK(r.mean == doctest::Approx(3.0));
  CHECK(r.std == doctest::Approx(std::sqrt(8.0 / 3.0)));
  CHECK(r.class_mean(MorphologyClass::kQuadruped) == doctest::Approx(4.0));
  CHECK(std::isnan(r.class_mean(MorphologyClass::kHexapod)));
}

TEST_CASE("subsets are stratified, nested and seeded") {
  std::vector<Embodiment> pool = pool_of(MorphologyClass::kQuadruped, 7);
  for (auto& e : pool_of(MorphologyClass::kHexapod, 5)) pool.push_back(e);
  const std::vector<double> props = {0.2, 0.5, 1.0};
  const auto subs = make_subsets(pool, props, 3);
  auto count = [&](const std::vector<std::string>& ids, const std::string& prefix) {
    int n = 0;
    for (const auto& id : ids) n += id.rfind(prefix, 0) == 0 ? 1 : 0;
    return n;
  };
  for (double p : props) {
    CAPTURE(p);
    CHECK(count(subs.at(p), "quadruped") == static_cast<int>(std::ceil(p * 7 - 1e-9)));
    CHECK(count(subs.at(p), "hexapod") == static_cast<int>(std::ceil(p * 5 - 1e-9)));
  }
  const std::set<std::string> small(subs.at(0.2).begin(), subs.at(0.2).end());
  const std::set<std::string> mid(subs.at(0.5).begin(), subs.at(0.5).end());
  for (const auto& id : small) CHECK(mid.count(id) == 1);
  CHECK(subs.at(1.0).size() == pool.size());
  CHECK(make_subsets(pool, props, 3) == subs);
  CHECK(make_subset(pool, 0.5, 3) == subs.at(0.5));
  bool differs = false;
  for (std::uint64_t s = 4; s < 10 && !differs; ++s) differs = make_subset(pool, 0.5, s) != subs.at(0.5);
  CHECK(differs);
}

TEST_CASE("evaluation depends on position, not on ids") {
  auto set = pool_of(MorphologyClass::kQuadruped, 2);
  EvalConfig cfg;
  cfg.episodes = 2;
  cfg.steps = 20;
  const ZeroController zero;
  const EvalResult a = evaluate_policy(zero, set, EnvConfig{}, cfg);
  set[0].id = "renamed";
  const EvalResult b = evaluate_policy(zero, set, EnvConfig{}, cfg);
  REQUIRE(a.rows.size() == 2);
  CHECK(b.rows[0].embodiment_id == "renamed");
  CHECK(a.rows[0].mean_reward == b.rows[0].mean_reward);
  CHECK(a.mean == b.mean);
  CHECK(a.rows[0].mean_length <= 20.0);
}

TEST_CASE("ood table at scale one matches a plain evaluation") {
  auto set = pool_of(MorphologyClass::kHexapod, 2);
  EvalConfig cfg;
  cfg.episodes = 1;
  cfg.steps = 15;
  const ZeroController zero;
  const OodTable t = ood_eval(zero, set, {1.0, 0.1}, EnvConfig{}, cfg);
  const EvalResult plain = evaluate_policy(zero, set, EnvConfig{}, cfg);
  REQUIRE(t.results.size() == 2);
  CHECK(t.results[0].mean == plain.mean);
  CHECK(t.class_means.at(MorphologyClass::kHexapod).size() == 2);
  std::ostringstream csv;
  write_ood_csv(csv, t);
  CHECK(csv.str().rfind("class,scale_1,scale_0.1", 0) == 0);
}

TEST_CASE("cell records round-trip") {
  CellResult c;
  c.cell_id = "combined_p0.2_s1";
  c.mode = "combined";
  c.proportion = 0.2;
  c.seed = 1;
  c.train_embodiments = 5;
  c.train_samples = 12345;
  c.best_validation = 0.0123456789;
  c.eval.provenance = "surrogate eval";
  c.eval.rows = {{"q_1", MorphologyClass::kQuadruped, 1.0 / 3.0, 250, 0.25}};
  c.eval.aggregate();
  std::stringstream ss;
  write_cell_record(ss, c);
  const CellResult back = read_cell_record(ss);
  CHECK(back.cell_id == c.cell_id);
  CHECK(back.best_validation == c.best_validation);
  CHECK(back.eval.rows[0].mean_reward == c.eval.rows[0].mean_reward);
  CHECK(back.eval.mean == c.eval.mean);
  CHECK_FALSE(back.failed);
  std::istringstream bad("colour blue\n");
  CHECK_THROWS_AS(read_cell_record(bad), ParseError);
}

TEST_CASE("a tiny study runs and resumes") {
  testing::TempDir dir("study");
  StudyInputs in;
  in.train_pool = pool_of(MorphologyClass::kQuadruped, 3);
  in.test_set = pool_of(MorphologyClass::kQuadruped, 1, 100);
  for (std::size_t i = 0; i < in.train_pool.size(); ++i) in.experts.emplace(in.train_pool[i].id, random_expert(in.train_pool[i], i));

  ScalingConfig cfg;
  cfg.proportions = {0.5, 1.0};
  cfg.data_scaling_proportion = 0.34;
  cfg.data_multipliers = {1, 2};
  cfg.collect.steps = 4;
  cfg.collect.envs = 2;
  cfg.collect.validation_steps = 2;
  cfg.collect.slice_steps = 4;
  cfg.distill.epochs = 1;
  cfg.distill.batch = 4;
  cfg.distill.accumulation = 1;
  cfg.arch.heads = 1;
  cfg.arch.latent_dim = 4;
  cfg.arch.encoder_hidden = 8;
  cfg.arch.general_dim = 8;
  cfg.arch.core_hidden = {8};
  cfg.arch.action_latent_dim = 8;
  cfg.arch.action_desc_hidden = 8;
  cfg.arch.action_desc_dim = 4;
  cfg.arch.decoder_hidden = {8};
  cfg.eval.episodes = 1;
  cfg.eval.steps = 5;
  cfg.work_dir = dir.str();

  const StudyResult first = run_scaling_study(cfg, in);
  REQUIRE(first.cells.size() == 4);
  for (const auto& c : first.cells) {
    CHECK_FALSE(c.failed);
    CHECK_FALSE(c.resumed);
  }
  CHECK(first.cells[0].train_embodiments == 2);
  CHECK(first.cells[1].train_embodiments == 3);
  CHECK(first.cells[2].mode == "data");
  CHECK(first.cells[3].train_samples == 2 * first.cells[2].train_samples);
  CHECK(std::filesystem::exists(dir.file("results.csv")));

  std::filesystem::remove_all(std::filesystem::path(dir.str()) / "cells" / first.cells[1].cell_id);
  const StudyResult second = run_scaling_study(cfg, in);
  REQUIRE(second.cells.size() == 4);
  CHECK(second.cells[0].resumed);
  CHECK_FALSE(second.cells[1].resumed);
  CHECK(second.cells[1].eval.mean == first.cells[1].eval.mean);
  CHECK(second.cells[0].eval.mean == first.cells[0].eval.mean);

  in.experts.clear();
  testing::TempDir other("study2");
  cfg.work_dir = other.str();
  CHECK_THROWS_AS(run_scaling_study(cfg, in), MissingExpert);
}

}
