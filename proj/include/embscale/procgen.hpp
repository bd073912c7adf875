#ifndef EMBSCALE_PROCGEN_HPP_
#define EMBSCALE_PROCGEN_HPP_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "embscale/embodiment.hpp"

namespace embscale {

// Base geometry/mass per link unit and motor limits per joint unit, keyed by
// unit name within a class (e.g. "thigh", "front_thigh").
struct LinkUnit {
  Shape shape;
  double mass = 0.0;
};

struct JointUnit {
  double lower = 0.0;
  double upper = 0.0;
  double max_torque = 0.0;
  double max_velocity = 0.0;
};

struct BaseUnitTable {
  std::map<std::string, LinkUnit> links;    // key "<class>/<unit>"
  std::map<std::string, JointUnit> joints;  // key "<class>/<unit>"

  // Values of the generator's reference tables. Humanoid arm links are not
  // tabulated there and carry invented values.
  static const BaseUnitTable& reference();

  const LinkUnit& link(MorphologyClass c, std::string_view unit) const;
  const JointUnit& joint(MorphologyClass c, std::string_view unit) const;
};

// Candidate values of every variation parameter.
namespace variation_grid {
inline constexpr std::array<int, 4> kKneeCounts = {0, 1, 2, 3};
inline constexpr std::array<double, 3> kAllLinkScales = {0.8, 1.0, 1.2};
inline constexpr std::array<double, 5> kLengthScales = {0.4, 0.8, 1.0, 1.2, 1.6};
inline constexpr std::array<double, 2> kFootScales = {1.0, 2.0};
inline constexpr std::array<double, 5> kTorsoScales = {0.4, 0.8, 1.0, 1.2, 1.6};
inline constexpr std::array<double, 3> kKneeLimitScales = {0.2, 0.6, 1.0};
}  // namespace variation_grid

// Throws UnsupportedVariation when a field is outside its candidate set or
// torso_size_scale presence does not match the class.
void check_variation(MorphologyClass c, const VariationSpec& v);

// All grid points of a class in enumeration order (knees, all, thigh, calf,
// foot, [torso], knee limit; last index fastest).
std::vector<VariationSpec> enumerate_variations(MorphologyClass c);

// The identity variation (every factor 1.0, one knee per leg).
VariationSpec reference_variation(MorphologyClass c);

Embodiment build_embodiment(MorphologyClass c, const VariationSpec& v,
                            const BaseUnitTable& base = BaseUnitTable::reference(),
                            std::string id = {});

// Copy of e with every knee range scaled by `scale` about the knee's nominal
// angle. The variation record's knee_limit_scale is multiplied by `scale`.
Embodiment apply_knee_limit_scale(const Embodiment& e, double scale);

// --- dataset ----------------------------------------------------------------

inline constexpr std::uint64_t kReferenceSeed = 42;
inline constexpr int kHumanoidCount = 348;
inline constexpr int kQuadrupedCount = 332;
inline constexpr int kHexapodCount = 332;

int dataset_class_size(MorphologyClass c);

struct ManifestEntry {
  std::string id;
  MorphologyClass cls = MorphologyClass::kQuadruped;
  VariationSpec variation;
};

struct ClassSplit {
  std::vector<int> train;  // indices within the class, ascending
  std::vector<int> test;
};

struct DatasetManifest {
  std::uint64_t seed = kReferenceSeed;
  std::string tool_version;
  std::vector<ManifestEntry> entries;  // class-major: humanoids, quadrupeds, hexapods
  std::map<MorphologyClass, ClassSplit> splits;  // empty until split_dataset

  std::vector<const ManifestEntry*> entries_of(MorphologyClass c) const;
  const ManifestEntry* find(std::string_view id) const;
};

struct GeneratedDataset {
  std::vector<Embodiment> embodiments;  // same order as manifest.entries
  DatasetManifest manifest;
};

// Seeded, duplicate-free sample of the variation grid per class, reference
// robots excluded. Deterministic in `seed`.
GeneratedDataset generate_dataset(std::uint64_t seed = kReferenceSeed);

// Rebuilds the embodiments a manifest describes.
std::vector<Embodiment> build_from_manifest(const DatasetManifest& m);

// 80/20 split per class. Quadruped and hexapod share one list when their
// sizes match. The reference seed on a reference-sized dataset returns the
// frozen published lists.
std::map<MorphologyClass, ClassSplit> split_dataset(const DatasetManifest& m, std::uint64_t seed);

// Published test lists for the reference dataset.
const std::vector<int>& reference_test_indices(MorphologyClass c);

void write_manifest(std::ostream& out, const DatasetManifest& m);
DatasetManifest read_manifest(std::istream& in);
void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

// --- statistics -------------------------------------------------------------

struct HistogramRow {
  MorphologyClass cls;
  std::string parameter;  // leg_length_m, joint_count, knee_count, knee_limit_scale
  std::string bin;
  int count = 0;
};

struct StatisticsReport {
  std::vector<HistogramRow> rows;
  // Total count of one histogram for a class.
  int total(MorphologyClass c, std::string_view parameter) const;
};

// Mean distance from the leg's first joint to its foot link origin at the
// nominal pose, over all feet.
double mean_leg_length(const Embodiment& e);

inline constexpr double kLegLengthBin = 0.05;  // m

StatisticsReport dataset_statistics(const std::vector<Embodiment>& embodiments);
void write_statistics_csv(std::ostream& out, const StatisticsReport& r);

}  // namespace embscale

#endif  // EMBSCALE_PROCGEN_HPP_
