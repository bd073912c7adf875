#include <cmath>
#include <sstream>

#include "doctest.h"
#include "embscale/randomization.hpp"
#include "support.hpp"

using namespace embscale;

namespace {

bool within_3_sigma(long hits, long trials, double p) {
  const double mean = trials * p;
  const double sigma = std::sqrt(trials * p * (1.0 - p));
  return std::abs(static_cast<double>(hits) - mean) <= 3.0 * sigma;
}

}  // namespace

TEST_SUITE("randomization") {

TEST_CASE("scaled ranges examples") {
  const RandomizationRanges base;
  CHECK(scaled_ranges(base, 1.0) == base);
  const auto zero = scaled_ranges(base, 0.0);
  CHECK(zero.gravity == Range{1.0, 1.0});
  CHECK(zero.motor_strength == Range{1.0, 1.0});
  CHECK(zero.joint_position_offset == Range{0.0, 0.0});
  CHECK(zero.joint_observation_dropout == 0.0);
  CHECK(zero.action_delay_chance == 0.0);
  CHECK(zero.joint_velocity_noise == 0.0);
  const auto half = scaled_ranges(base, 0.5);
  CHECK(half.motor_strength.lo == doctest::Approx(0.75));
  CHECK(half.motor_strength.hi == doctest::Approx(1.25));
  CHECK(half.gravity.lo == doctest::Approx(1.0 - 0.5 * 9.81));
  CHECK(half.resample_probability == base.resample_probability);
  CHECK_THROWS_AS(scaled_ranges(base, 1.01), InvalidCurriculum);
}

TEST_CASE("scaled bounds are linear in k") {
  const RandomizationRanges base;
  const auto a = scaled_ranges(base, 0.2), b = scaled_ranges(base, 0.4), c = scaled_ranges(base, 0.6);
  CHECK(b.added_mass.lo - a.added_mass.lo == doctest::Approx(c.added_mass.lo - b.added_mass.lo));
  CHECK(b.static_friction.hi - a.static_friction.hi == doctest::Approx(c.static_friction.hi - b.static_friction.hi));
}

TEST_CASE("curriculum update rule") {
  CHECK(update_curriculum(CurriculumState(0.5), false, 0.3).k() == doctest::Approx(0.51));
  CHECK(update_curriculum(CurriculumState(0.5), true, 0.3).k() == doctest::Approx(0.49));
  CHECK(update_curriculum(CurriculumState(0.5), false, 0.4).k() == doctest::Approx(0.49));
  CHECK(update_curriculum(CurriculumState(1.0), false, 0.0).k() == 1.0);
  CHECK(update_curriculum(CurriculumState(0.0), true, 0.0).k() == 0.0);
  CHECK_THROWS_AS(CurriculumState(2.0), InvalidCurriculum);
}

TEST_CASE("one hundred successes reach exactly one") {
  CurriculumState s;
  for (int i = 0; i < 99; ++i) {
    s.update(false, 0.1);
    CHECK(s.k() < 1.0);
  }
  s.update(false, 0.1);
  CHECK(s.k() == 1.0);
  CHECK(s.successes() == 100);
  CHECK(s.streak() == 100);
  s.update(true, 0.0);
  CHECK(s.streak() == -1);
  CHECK(s.k() == 0.99);
}

TEST_CASE("episode start at k = 0 draws midpoints") {
  Rng rng(1);
  const auto d = sample_randomization(scaled_ranges(RandomizationRanges{}, 0.0), rng, RandomizationPhase::kEpisodeStart, 5);
  CHECK(d.start_orientation == Vec3::Zero());
  CHECK(d.start_joint_position_factor == Vector::Zero(5));
  CHECK(d.start_joint_velocity_factor == Vector::Zero(5));
  CHECK(d.start_lin_vel == Vec3::Zero());
  CHECK(d.physical.motor_strength == 1.0);
  CHECK(d.physical.gravity == doctest::Approx(9.81));
  CHECK_FALSE(d.push.has_value());
  CHECK(d.resampled[static_cast<std::size_t>(PhysicalParam::kMotorStrength)]);
  CHECK_FALSE(d.resampled[static_cast<std::size_t>(PhysicalParam::kPush)]);
}

TEST_CASE("episode start draws stay inside the table ranges") {
  Rng rng(2);
  const RandomizationRanges r;
  for (int i = 0; i < 2000; ++i) {
    const auto d = sample_randomization(r, rng, RandomizationPhase::kEpisodeStart, 3);
    CHECK(d.start_joint_position_factor.cwiseAbs().maxCoeff() <= 0.5);
    CHECK(d.physical.motor_strength >= 0.5);
    CHECK(d.physical.motor_strength <= 1.5);
    CHECK(d.physical.gravity >= 9.81 - 9.81 - 1e-12);
    CHECK(d.physical.gravity <= 9.81 + 9.81 + 1e-12);
    CHECK(d.physical.added_mass >= -2.0);
  }
}

TEST_CASE("per-step resample and dropout rates") {
  Rng rng(3);
  const RandomizationRanges r;
  const int steps = 100000, J = 1;
  long resampled = 0, dropped = 0, pushes = 0, delayed = 0;
  for (int i = 0; i < steps; ++i) {
    const auto d = sample_randomization(r, rng, RandomizationPhase::kPerStep, J);
    for (int p = 0; p < kPhysicalParamCount; ++p) resampled += d.resampled[static_cast<std::size_t>(p)] ? 1 : 0;
    dropped += d.dropout[0] ? 1 : 0;
    pushes += d.push ? 1 : 0;
    delayed += d.action_delayed ? 1 : 0;
  }
  CHECK(within_3_sigma(resampled, static_cast<long>(steps) * kPhysicalParamCount, 0.002));
  CHECK(within_3_sigma(pushes, steps, 0.002));
  CHECK(within_3_sigma(dropped, steps, 0.05));
  CHECK(within_3_sigma(delayed, steps, 0.05));
}

TEST_CASE("per-step noise magnitudes") {
  Rng rng(4);
  const RandomizationRanges r;
  for (int i = 0; i < 1000; ++i) {
    const auto d = sample_randomization(r, rng, RandomizationPhase::kPerStep, 4);
    CHECK(d.joint_position_noise.cwiseAbs().maxCoeff() <= 0.01);
    CHECK(d.joint_velocity_noise.cwiseAbs().maxCoeff() <= 1.5);
    CHECK(d.ang_vel_noise.cwiseAbs().maxCoeff() <= 0.2);
    CHECK(d.gravity_noise.cwiseAbs().maxCoeff() <= 0.05);
  }
}

TEST_CASE("same seed, same draws") {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) {
    const auto x = sample_randomization(RandomizationRanges{}, a, RandomizationPhase::kPerStep, 3);
    const auto y = sample_randomization(RandomizationRanges{}, b, RandomizationPhase::kPerStep, 3);
    CHECK(x.joint_velocity_noise == y.joint_velocity_noise);
    CHECK(x.dropout == y.dropout);
    CHECK(x.resampled == y.resampled);
  }
}

TEST_CASE("apply_physical copies only resampled fields") {
  PhysicalParams cur = nominal_physical(RandomizationRanges{}, 2);
  RandomizationDraw d;
  d.physical = cur;
  d.physical.motor_strength = 1.4;
  d.physical.restitution = 0.9;
  d.resampled[static_cast<std::size_t>(PhysicalParam::kMotorStrength)] = true;
  apply_physical(cur, d);
  CHECK(cur.motor_strength == 1.4);
  CHECK(cur.restitution == 0.5);
}

TEST_CASE("ranges file round-trip and validation") {
  RandomizationRanges r;
  r.motor_strength = {0.8, 1.2};
  r.joint_observation_dropout = 0.1;
  r.max_action_delay = 2;
  std::stringstream ss;
  write_ranges(ss, r);
  CHECK(ss.str().find("Min & max motor strength: (0.8, 1.2)") != std::string::npos);
  CHECK(read_ranges(ss) == r);

  std::istringstream partial("# only one row\nGravity noise: 0.1\n");
  RandomizationRanges expect;
  expect.gravity_noise = 0.1;
  CHECK(read_ranges(partial) == expect);

  std::istringstream bad_row("Colour: 3\n");
  CHECK_THROWS_AS(read_ranges(bad_row), ParseError);
  std::istringstream inverted("Min & max motor strength: (1.5, 0.5)\n");
  CHECK_THROWS_AS(read_ranges(inverted), InvalidCurriculum);
  RandomizationRanges p;
  p.joint_observation_dropout = 1.5;
  CHECK_THROWS_AS(check_ranges(p), InvalidCurriculum);
}

}
