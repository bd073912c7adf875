#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "embscale/procgen.hpp"

using namespace embscale;

namespace {

const JointSpec& joint(const Embodiment& e, const std::string& name) {
  const JointSpec* j = e.find_joint(name);
  REQUIRE(j != nullptr);
  return *j;
}

const GeneratedDataset& dataset() {
  static const GeneratedDataset d = generate_dataset(kReferenceSeed);
  return d;
}

}  // namespace

TEST_SUITE("procgen") {

TEST_CASE("reference quadruped carries the base table values") {
  const Embodiment e = build_embodiment(MorphologyClass::kQuadruped, reference_variation(MorphologyClass::kQuadruped));
  const LinkSpec* trunk = e.find_link("trunk");
  REQUIRE(trunk != nullptr);
  CHECK(trunk->shape == Shape::box(0.38, 0.09, 0.11));
  CHECK(trunk->mass == 6.921);
  const JointSpec& knee = joint(e, "FL_knee_joint");
  CHECK(knee.lower == -2.72);
  CHECK(knee.upper == -0.84);
  CHECK(knee.max_torque == 45.43);
  CHECK(knee.max_velocity == 15.7);
  CHECK(e.links.front().name == "trunk");
  CHECK(e.num_actuated() == 12);
}

TEST_CASE("construction order starts at the root of each class") {
  const Embodiment h = build_embodiment(MorphologyClass::kHumanoid, reference_variation(MorphologyClass::kHumanoid));
  CHECK(h.links.front().name == "pelvis");
  CHECK(h.links[1].name == "torso_link");
  CHECK(h.num_actuated() == 19);
  const Embodiment x = build_embodiment(MorphologyClass::kHexapod, reference_variation(MorphologyClass::kHexapod));
  CHECK(x.links.front().name == "trunk");
  CHECK(x.num_actuated() == 18);
  CHECK(foot_links(x).size() == 6);
}

TEST_CASE("knee limit scaling uses the nominal angle as fixed point") {
  const Embodiment e = build_embodiment(MorphologyClass::kQuadruped, reference_variation(MorphologyClass::kQuadruped));
  const auto expect = [](double scale) {
    const double q = -1.5;
    return std::pair{q + scale * (-2.72 - q), q + scale * (-0.84 - q)};
  };
  for (double s : {0.2, 0.1, 0.001}) {
    const Embodiment scaled = apply_knee_limit_scale(e, s);
    const JointSpec& k = joint(scaled, "RL_knee_joint");
    CHECK(k.lower == doctest::Approx(expect(s).first).epsilon(1e-12));
    CHECK(k.upper == doctest::Approx(expect(s).second).epsilon(1e-12));
    CHECK(k.upper - k.lower == doctest::Approx(s * (2.72 - 0.84)).epsilon(1e-9));
    CHECK(scaled.variation.knee_limit_scale == doctest::Approx(s));
    // non-knee joints keep their limits
    CHECK(joint(scaled, "RL_thigh_joint").lower == joint(e, "RL_thigh_joint").lower);
  }
  CHECK(joint(apply_knee_limit_scale(e, 0.2), "FL_knee_joint").lower == doctest::Approx(-1.744));
  CHECK(joint(apply_knee_limit_scale(e, 0.2), "FL_knee_joint").upper == doctest::Approx(-1.368));
  CHECK(joint(apply_knee_limit_scale(e, 0.1), "FL_knee_joint").lower == doctest::Approx(-1.622));
  CHECK(joint(apply_knee_limit_scale(e, 0.1), "FL_knee_joint").upper == doctest::Approx(-1.434));
  CHECK(approx_equal(apply_knee_limit_scale(e, 1.0), e, 0.0));

  VariationSpec v = reference_variation(MorphologyClass::kQuadruped);
  v.knee_limit_scale = 0.2;
  const JointSpec& built = joint(build_embodiment(MorphologyClass::kQuadruped, v), "FL_knee_joint");
  CHECK(built.lower == doctest::Approx(-1.744));
  CHECK(built.upper == doctest::Approx(-1.368));
}

TEST_CASE("variations outside the grid are rejected") {
  VariationSpec v = reference_variation(MorphologyClass::kQuadruped);
  v.thigh_length_scale = 0.9;
  CHECK_THROWS_AS(build_embodiment(MorphologyClass::kQuadruped, v), UnsupportedVariation);
  v = reference_variation(MorphologyClass::kQuadruped);
  v.torso_size_scale = 1.0;
  CHECK_THROWS_AS(check_variation(MorphologyClass::kQuadruped, v), UnsupportedVariation);
  v = reference_variation(MorphologyClass::kHumanoid);
  v.torso_size_scale.reset();
  CHECK_THROWS_AS(check_variation(MorphologyClass::kHumanoid, v), UnsupportedVariation);
  v = reference_variation(MorphologyClass::kHexapod);
  v.knee_joint_count = 4;
  CHECK_THROWS_AS(check_variation(MorphologyClass::kHexapod, v), UnsupportedVariation);
}

TEST_CASE("grid cardinality") {
  CHECK(enumerate_variations(MorphologyClass::kQuadruped).size() == 4u * 3 * 5 * 5 * 2 * 3);
  CHECK(enumerate_variations(MorphologyClass::kHexapod).size() == 1800u);
  CHECK(enumerate_variations(MorphologyClass::kHumanoid).size() == 1800u * 5);
}

TEST_CASE("uniform scaling multiplies masses by the volume factor") {
  for (auto c : kAllClasses) {
    VariationSpec v = reference_variation(c);
    const Embodiment base = build_embodiment(c, v);
    v.all_link_scale = 1.2;
    const Embodiment big = build_embodiment(c, v);
    REQUIRE(base.links.size() == big.links.size());
    for (std::size_t i = 0; i < base.links.size(); ++i) {
      CHECK(big.links[i].mass == doctest::Approx(base.links[i].mass * 1.728).epsilon(1e-9));
    }
  }
}

TEST_CASE("length-only scaling is linear in mass") {
  VariationSpec v = reference_variation(MorphologyClass::kQuadruped);
  const Embodiment base = build_embodiment(MorphologyClass::kQuadruped, v);
  v.thigh_length_scale = 1.6;
  const Embodiment longer = build_embodiment(MorphologyClass::kQuadruped, v);
  CHECK(longer.find_link("FL_thigh")->mass == doctest::Approx(1.6 * base.find_link("FL_thigh")->mass));
  CHECK(longer.find_link("FL_calf")->mass == base.find_link("FL_calf")->mass);
}

TEST_CASE("knee count shapes the leg chain") {
  for (auto c : kAllClasses) {
    for (int k : variation_grid::kKneeCounts) {
      VariationSpec v = reference_variation(c);
      v.knee_joint_count = k;
      const Embodiment e = build_embodiment(c, v);
      CHECK(validate(e).empty());
      int knees = 0, calves = 0;
      for (const auto& j : e.joints) knees += is_knee_joint(j.name) ? 1 : 0;
      for (const auto& l : e.links) calves += l.name.find("calf") != std::string::npos ? 1 : 0;
      const int legs = static_cast<int>(foot_links(e).size());
      CHECK(knees == k * legs);
      CHECK(calves == k * legs);
    }
  }
}

TEST_CASE("multi-knee chains split the calf into equal segments") {
  VariationSpec v = reference_variation(MorphologyClass::kHexapod);
  const Embodiment one = build_embodiment(MorphologyClass::kHexapod, v);
  v.knee_joint_count = 2;
  const Embodiment two = build_embodiment(MorphologyClass::kHexapod, v);
  const LinkSpec* c1 = two.find_link("FL_calf");
  const LinkSpec* c2 = two.find_link("FL_calf2");
  REQUIRE(c1 != nullptr);
  REQUIRE(c2 != nullptr);
  CHECK(c1->shape.dims[0] == doctest::Approx(one.find_link("FL_calf")->shape.dims[0] / 2));
  CHECK(c1->mass + c2->mass == doctest::Approx(one.find_link("FL_calf")->mass));
}

TEST_CASE("reference dataset") {
  const auto& d = dataset();
  CHECK(d.embodiments.size() == 1012u);
  CHECK(d.manifest.entries_of(MorphologyClass::kHumanoid).size() == 348u);
  CHECK(d.manifest.entries_of(MorphologyClass::kQuadruped).size() == 332u);
  CHECK(d.manifest.entries_of(MorphologyClass::kHexapod).size() == 332u);

  std::set<std::string> ids;
  for (auto c : kAllClasses) {
    std::set<std::string> seen;
    for (const auto* entry : d.manifest.entries_of(c)) {
      CHECK(entry->variation != reference_variation(c));
      std::ostringstream key;
      key << entry->variation.knee_joint_count << entry->variation.all_link_scale << ","
          << entry->variation.thigh_length_scale << "," << entry->variation.calf_length_scale << ","
          << entry->variation.foot_size_scale << "," << entry->variation.torso_size_scale.value_or(0) << ","
          << entry->variation.knee_limit_scale;
      CHECK(seen.insert(key.str()).second);
    }
  }
  for (const auto& e : d.embodiments) {
    CHECK(ids.insert(e.id).second);
    CHECK(validate(e).empty());
    for (const auto& j : e.joints) {
      if (j.actuated()) CHECK((j.nominal_angle >= j.lower && j.nominal_angle <= j.upper));
    }
  }
}

TEST_CASE("generation is deterministic and seed dependent") {
  std::ostringstream a, b, c;
  write_manifest(a, dataset().manifest);
  write_manifest(b, generate_dataset(kReferenceSeed).manifest);
  write_manifest(c, generate_dataset(7).manifest);
  CHECK(a.str() == b.str());
  CHECK(a.str() != c.str());
}

TEST_CASE("reference split reproduces the frozen lists") {
  const auto splits = split_dataset(dataset().manifest, kReferenceSeed);
  CHECK(splits.at(MorphologyClass::kHumanoid).test.size() == 70u);
  CHECK(splits.at(MorphologyClass::kQuadruped).test.size() == 67u);
  CHECK(splits.at(MorphologyClass::kHexapod).test.size() == 67u);
  const auto& h = splits.at(MorphologyClass::kHumanoid).test;
  const auto& q = splits.at(MorphologyClass::kQuadruped).test;
  CHECK(std::vector<int>(h.begin(), h.begin() + 5) == std::vector<int>{0, 7, 12, 20, 31});
  CHECK(std::vector<int>(q.begin(), q.begin() + 5) == std::vector<int>{0, 7, 8, 20, 31});
  CHECK(q == splits.at(MorphologyClass::kHexapod).test);
  CHECK(h == reference_test_indices(MorphologyClass::kHumanoid));
}

TEST_CASE("any seed gives disjoint exhaustive splits") {
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    const auto splits = split_dataset(dataset().manifest, seed);
    for (auto c : kAllClasses) {
      const auto& s = splits.at(c);
      std::set<int> all(s.train.begin(), s.train.end());
      for (int t : s.test) CHECK(all.insert(t).second);
      CHECK(all.size() == static_cast<std::size_t>(dataset_class_size(c)));
      CHECK(*all.begin() == 0);
      CHECK(*all.rbegin() == dataset_class_size(c) - 1);
      CHECK(std::is_sorted(s.test.begin(), s.test.end()));
    }
    CHECK(splits.at(MorphologyClass::kQuadruped).test == splits.at(MorphologyClass::kHexapod).test);
  }
}

TEST_CASE("split rejects a manifest whose class sizes were tampered with") {
  DatasetManifest m = dataset().manifest;
  m.splits = split_dataset(m, kReferenceSeed);
  std::ostringstream out;
  write_manifest(out, m);
  std::string text = out.str();
  const auto pos = text.find("class quadruped 332");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 19, "class quadruped 331");
  std::istringstream in(text);
  CHECK_THROWS_AS(read_manifest(in), SizeMismatch);
}

TEST_CASE("manifest round-trip rebuilds identical embodiments") {
  DatasetManifest m = dataset().manifest;
  m.splits = split_dataset(m, kReferenceSeed);
  std::ostringstream out;
  write_manifest(out, m);
  std::istringstream in(out.str());
  const DatasetManifest back = read_manifest(in);
  std::ostringstream again;
  write_manifest(again, back);
  CHECK(again.str() == out.str());
  const auto rebuilt = build_from_manifest(back);
  REQUIRE(rebuilt.size() == dataset().embodiments.size());
  for (std::size_t i = 0; i < rebuilt.size(); i += 37) CHECK(approx_equal(rebuilt[i], dataset().embodiments[i], 0.0));
}

TEST_CASE("statistics histograms") {
  const auto one = dataset_statistics({dataset().embodiments.front()});
  for (const char* p : {"leg_length_m", "joint_count", "knee_count", "knee_limit_scale"}) {
    CHECK(one.total(MorphologyClass::kHumanoid, p) == 1);
  }
  const auto full = dataset_statistics(dataset().embodiments);
  std::set<std::string> limit_bins, knee_bins;
  for (const auto& r : full.rows) {
    if (r.parameter == "knee_limit_scale") limit_bins.insert(r.bin);
    if (r.parameter == "knee_count") knee_bins.insert(r.bin);
  }
  CHECK(limit_bins == std::set<std::string>{"0.2", "0.6", "1"});
  CHECK(knee_bins == std::set<std::string>{"0", "1", "2", "3"});
  for (auto c : kAllClasses) {
    for (const char* p : {"leg_length_m", "joint_count", "knee_count", "knee_limit_scale"}) {
      CHECK(full.total(c, p) == dataset_class_size(c));
    }
  }
  CHECK_THROWS_AS(dataset_statistics({}), DegenerateInput);
  std::ostringstream csv;
  write_statistics_csv(csv, one);
  CHECK(csv.str().rfind("class,parameter,bin,count\n", 0) == 0);
}

TEST_CASE("leg length of the reference quadruped") {
  const Embodiment e = build_embodiment(MorphologyClass::kQuadruped, reference_variation(MorphologyClass::kQuadruped));
  const double leg = mean_leg_length(e);
  // hip offset + thigh + calf is an upper bound on the straight-line distance
  CHECK(leg > 0.1);
  CHECK(leg < 0.05 + 0.21 + 0.12 + 1e-9);
}

}
