#include "embscale/procgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace embscale {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

std::string unit_key(MorphologyClass c, std::string_view unit) {
  return std::string(to_string(c)) + "/" + std::string(unit);
}

template <std::size_t N>
bool in_set(double x, const std::array<double, N>& set) {
  return std::any_of(set.begin(), set.end(), [x](double c) { return c == x; });
}

BaseUnitTable make_reference_table() {
  BaseUnitTable t;
  auto link = [&](MorphologyClass c, const char* unit, Shape s, double mass) {
    t.links[unit_key(c, unit)] = {s, mass};
  };
  auto joint = [&](MorphologyClass c, const char* unit, double lo, double hi, double torque,
                   double vel) { t.joints[unit_key(c, unit)] = {lo, hi, torque, vel}; };

  using MC = MorphologyClass;
  link(MC::kHumanoid, "pelvis", Shape::sphere(0.05), 5.390);
  link(MC::kHumanoid, "torso", Shape::box(0.08, 0.26, 0.18), 17.789);
  link(MC::kHumanoid, "hip_yaw_link", Shape::cylinder(0.02, 0.01), 2.244);
  link(MC::kHumanoid, "hip_roll_link", Shape::cylinder(0.01, 0.02), 2.232);
  link(MC::kHumanoid, "thigh", Shape::cylinder(0.2, 0.05), 4.152);
  link(MC::kHumanoid, "calf", Shape::cylinder(0.2, 0.05), 1.721);
  link(MC::kHumanoid, "foot", Shape::box(0.28, 0.03, 0.024), 0.474);
  // Arms are not tabulated; loosely sized after a full-size humanoid.
  link(MC::kHumanoid, "shoulder_pitch_link", Shape::sphere(0.04), 1.0);
  link(MC::kHumanoid, "shoulder_roll_link", Shape::sphere(0.035), 0.8);
  link(MC::kHumanoid, "upper_arm", Shape::cylinder(0.15, 0.03), 1.4);
  link(MC::kHumanoid, "forearm", Shape::cylinder(0.15, 0.025), 0.7);

  joint(MC::kHumanoid, "torso", -2.35, 2.35, 200, 23);
  joint(MC::kHumanoid, "shoulder_pitch", -2.87, 2.87, 40, 9);
  joint(MC::kHumanoid, "shoulder_roll", -0.34, 3.11, 40, 9);
  joint(MC::kHumanoid, "shoulder_yaw", -1.30, 4.45, 18, 20);
  joint(MC::kHumanoid, "elbow", -1.25, 2.61, 18, 20);
  joint(MC::kHumanoid, "hip_yaw", -0.43, 0.43, 200, 23);
  joint(MC::kHumanoid, "hip_roll", -0.43, 0.43, 200, 23);
  joint(MC::kHumanoid, "hip_pitch", -3.10, 2.50, 200, 23);
  joint(MC::kHumanoid, "knee", -0.26, 2.00, 300, 14);
  joint(MC::kHumanoid, "ankle", -0.87, 0.52, 40, 9);

  link(MC::kQuadruped, "trunk", Shape::box(0.38, 0.09, 0.11), 6.921);
  link(MC::kQuadruped, "hip", Shape::cylinder(0.04, 0.046), 1.152);
  link(MC::kQuadruped, "thigh", Shape::box(0.21, 0.025, 0.034), 1.152);
  link(MC::kQuadruped, "calf", Shape::cylinder(0.12, 0.013), 0.154);
  link(MC::kQuadruped, "foot", Shape::sphere(0.022), 0.040);
  joint(MC::kQuadruped, "hip", -1.05, 1.05, 23.7, 30.1);
  joint(MC::kQuadruped, "front_thigh", -1.57, 3.49, 23.7, 30.1);
  joint(MC::kQuadruped, "rear_thigh", -0.52, 4.53, 23.7, 30.1);
  joint(MC::kQuadruped, "knee", -2.72, -0.84, 45.43, 15.7);

  link(MC::kHexapod, "trunk", Shape::box(0.8, 0.5, 0.1), 6.921);
  link(MC::kHexapod, "hip", Shape::sphere(0.05), 0.678);
  link(MC::kHexapod, "thigh", Shape::cylinder(0.22, 0.03), 1.152);
  link(MC::kHexapod, "calf", Shape::cylinder(0.22, 0.025), 0.154);
  link(MC::kHexapod, "foot", Shape::sphere(0.03), 0.040);
  joint(MC::kHexapod, "hip", -1.57, 1.57, 100, 30);
  joint(MC::kHexapod, "thigh", -1.57, 1.57, 100, 30);
  joint(MC::kHexapod, "knee", -1.57, 1.57, 100, 30);
  return t;
}

// Accumulates links and joints in construction order and applies the uniform
// all-link scale to every dimension, offset and mass.
class Builder {
 public:
  Builder(MorphologyClass c, const VariationSpec& v, const BaseUnitTable& base)
      : cls_(c), v_(v), base_(base), s_(v.all_link_scale) {
    e_.cls = c;
    e_.variation = v;
  }

  // Adds a link built from a base unit. `dim_scale` multiplies the unit's
  // dimensions component-wise, `mass_scale` its mass (before the uniform scale).
  void link(std::string name, std::string_view unit, std::array<double, 3> dim_scale,
            double mass_scale, Vec3 offset = Vec3::Zero(), Vec3 rpy = Vec3::Zero()) {
    const LinkUnit& u = base_.link(cls_, unit);
    LinkSpec l;
    l.name = std::move(name);
    l.shape = u.shape;
    for (std::size_t k = 0; k < 3; ++k) l.shape.dims[k] *= dim_scale[k] * s_;
    l.mass = u.mass * mass_scale * s_ * s_ * s_;
    l.origin_xyz = offset * s_;
    l.origin_rpy = rpy;
    e_.links.push_back(std::move(l));
  }

  void revolute(std::string name, std::string parent, std::string child, Vec3 origin, Vec3 axis,
                std::string_view unit) {
    const JointUnit& u = base_.joint(cls_, unit);
    JointSpec j;
    j.name = std::move(name);
    j.type = JointType::kRevolute;
    j.parent_link = std::move(parent);
    j.child_link = std::move(child);
    j.origin_xyz = origin * s_;
    j.axis = axis;
    j.lower = u.lower;
    j.upper = u.upper;
    j.max_torque = u.max_torque;
    j.max_velocity = u.max_velocity;
    j.nominal_angle = table_nominal_angle(cls_, j.name);
    if (is_knee_joint(j.name)) scale_knee(j);
    e_.joints.push_back(std::move(j));
  }

  void fixed(std::string name, std::string parent, std::string child, Vec3 origin) {
    JointSpec j;
    j.name = std::move(name);
    j.type = JointType::kFixed;
    j.parent_link = std::move(parent);
    j.child_link = std::move(child);
    j.origin_xyz = origin * s_;
    e_.joints.push_back(std::move(j));
  }

  Embodiment finish(std::string id) {
    e_.id = std::move(id);
    update_derived(e_);
    return std::move(e_);
  }

 private:
  // Additional knees sit at 0; their range is the base knee range shifted so
  // 0 takes the place of the first knee's nominal angle. Every knee range is
  // then scaled about its nominal angle.
  void scale_knee(JointSpec& j) {
    const double first_nominal = table_nominal_angle(cls_, "knee_joint");
    if (j.nominal_angle != first_nominal) {
      j.lower -= first_nominal - j.nominal_angle;
      j.upper -= first_nominal - j.nominal_angle;
    }
    const double k = v_.knee_limit_scale;
    const double q = j.nominal_angle;
    j.lower = q + k * (j.lower - q);
    j.upper = q + k * (j.upper - q);
  }

  MorphologyClass cls_;
  VariationSpec v_;
  const BaseUnitTable& base_;
  double s_;
  Embodiment e_;
};

std::string knee_suffix(int i) { return i == 0 ? "" : std::to_string(i + 1); }

// Quadruped/hexapod leg prefixes in construction order (left before right).
struct LegSite {
  std::string prefix;
  double x;
  double side;  // +1 left, -1 right
};

Embodiment build_quadruped(const VariationSpec& v, const BaseUnitTable& base, std::string id) {
  Builder b(MorphologyClass::kQuadruped, v, base);
  const double t = v.thigh_length_scale;
  const double c = v.calf_length_scale;
  const double f = v.foot_size_scale;
  const int k = v.knee_joint_count;
  const double thigh_len = 0.21 * t;
  const double seg_len = k > 0 ? 0.12 * c / k : 0.0;
  const std::vector<LegSite> legs = {
      {"FL", 0.19, 1.0}, {"FR", 0.19, -1.0}, {"RL", -0.19, 1.0}, {"RR", -0.19, -1.0}};

  b.link("trunk", "trunk", {1, 1, 1}, 1.0);
  for (const auto& leg : legs) {
    b.revolute(leg.prefix + "_hip_joint", "trunk", leg.prefix + "_hip",
               Vec3(leg.x, leg.side * 0.045, 0.0), Vec3::UnitX(), "hip");
    b.link(leg.prefix + "_hip", "hip", {1, 1, 1}, 1.0, Vec3::Zero(), Vec3(kHalfPi, 0, 0));
  }
  for (const auto& leg : legs) {
    b.revolute(leg.prefix + "_thigh_joint", leg.prefix + "_hip", leg.prefix + "_thigh",
               Vec3(0.0, leg.side * 0.08, 0.0), Vec3::UnitY(),
               leg.x > 0 ? "front_thigh" : "rear_thigh");
    b.link(leg.prefix + "_thigh", "thigh", {t, 1, 1}, t, Vec3(0, 0, -thigh_len / 2),
           Vec3(0, kHalfPi, 0));
  }
  for (const auto& leg : legs) {
    std::string parent = leg.prefix + "_thigh";
    Vec3 origin(0, 0, -thigh_len);
    for (int i = 0; i < k; ++i) {
      const std::string child = leg.prefix + "_calf" + knee_suffix(i);
      b.revolute(leg.prefix + "_knee" + knee_suffix(i) + "_joint", parent, child, origin,
                 Vec3::UnitY(), "knee");
      b.link(child, "calf", {c / k, 1, 1}, c / k, Vec3(0, 0, -seg_len / 2));
      parent = child;
      origin = Vec3(0, 0, -seg_len);
    }
  }
  for (const auto& leg : legs) {
    const std::string parent = k > 0 ? leg.prefix + "_calf" + knee_suffix(k - 1) : leg.prefix + "_thigh";
    const Vec3 origin = k > 0 ? Vec3(0, 0, -seg_len) : Vec3(0, 0, -thigh_len);
    b.fixed(leg.prefix + "_foot_joint", parent, leg.prefix + "_foot", origin);
    b.link(leg.prefix + "_foot", "foot", {f, 1, 1}, f * f * f);
  }
  return b.finish(std::move(id));
}

Embodiment build_hexapod(const VariationSpec& v, const BaseUnitTable& base, std::string id) {
  Builder b(MorphologyClass::kHexapod, v, base);
  const double t = v.thigh_length_scale;
  const double c = v.calf_length_scale;
  const double f = v.foot_size_scale;
  const int k = v.knee_joint_count;
  const double thigh_len = 0.22 * t;
  const double seg_len = k > 0 ? 0.22 * c / k : 0.0;
  const std::vector<LegSite> legs = {{"FL", 0.3, 1.0},  {"FR", 0.3, -1.0}, {"ML", 0.0, 1.0},
                                     {"MR", 0.0, -1.0}, {"RL", -0.3, 1.0}, {"RR", -0.3, -1.0}};

  b.link("trunk", "trunk", {1, 1, 1}, 1.0);
  for (const auto& leg : legs) {
    b.revolute(leg.prefix + "_hip_joint", "trunk", leg.prefix + "_hip",
               Vec3(leg.x, leg.side * 0.25, 0.0), Vec3::UnitZ(), "hip");
    b.link(leg.prefix + "_hip", "hip", {1, 1, 1}, 1.0);
  }
  // The thigh points sideways at zero angle; positive thigh angles lift it and
  // positive knee angles fold the calf back towards vertical.
  for (const auto& leg : legs) {
    b.revolute(leg.prefix + "_thigh_joint", leg.prefix + "_hip", leg.prefix + "_thigh",
               Vec3(0.0, leg.side * 0.05, 0.0), Vec3(leg.side, 0, 0), "thigh");
    b.link(leg.prefix + "_thigh", "thigh", {t, 1, 1}, t, Vec3(0, leg.side * thigh_len / 2, 0),
           Vec3(kHalfPi, 0, 0));
  }
  for (const auto& leg : legs) {
    std::string parent = leg.prefix + "_thigh";
    Vec3 origin(0, leg.side * thigh_len, 0);
    for (int i = 0; i < k; ++i) {
      const std::string child = leg.prefix + "_calf" + knee_suffix(i);
      b.revolute(leg.prefix + "_knee" + knee_suffix(i) + "_joint", parent, child, origin,
                 Vec3(-leg.side, 0, 0), "knee");
      b.link(child, "calf", {c / k, 1, 1}, c / k, Vec3(0, 0, -seg_len / 2));
      parent = child;
      origin = Vec3(0, 0, -seg_len);
    }
  }
  for (const auto& leg : legs) {
    const std::string parent = k > 0 ? leg.prefix + "_calf" + knee_suffix(k - 1) : leg.prefix + "_thigh";
    const Vec3 origin = k > 0 ? Vec3(0, 0, -seg_len) : Vec3(0, leg.side * thigh_len, 0);
    b.fixed(leg.prefix + "_foot_joint", parent, leg.prefix + "_foot", origin);
    b.link(leg.prefix + "_foot", "foot", {f, 1, 1}, f * f * f);
  }
  return b.finish(std::move(id));
}

Embodiment build_humanoid(const VariationSpec& v, const BaseUnitTable& base, std::string id) {
  Builder b(MorphologyClass::kHumanoid, v, base);
  const double t = v.thigh_length_scale;
  const double c = v.calf_length_scale;
  const double f = v.foot_size_scale;
  const double tau = v.torso_size_scale.value_or(1.0);
  const int k = v.knee_joint_count;
  const double thigh_len = 0.2 * t;
  const double seg_len = k > 0 ? 0.2 * c / k : 0.0;
  const std::vector<std::pair<std::string, double>> sides = {{"left", 1.0}, {"right", -1.0}};

  b.link("pelvis", "pelvis", {1, 1, 1}, 1.0);
  b.revolute("torso_joint", "pelvis", "torso_link", Vec3(0, 0, 0.05), Vec3::UnitZ(), "torso");
  b.link("torso_link", "torso", {tau, tau, tau}, tau * tau * tau, Vec3(0, 0, 0.09 * tau));
  for (const auto& [side, sy] : sides) {
    b.revolute(side + "_hip_yaw_joint", "pelvis", side + "_hip_yaw_link",
               Vec3(0, sy * 0.0875, -0.05), Vec3::UnitZ(), "hip_yaw");
    b.link(side + "_hip_yaw_link", "hip_yaw_link", {1, 1, 1}, 1.0, Vec3(0, 0, -0.01));
  }
  for (const auto& [side, sy] : sides) {
    b.revolute(side + "_hip_roll_joint", side + "_hip_yaw_link", side + "_hip_roll_link",
               Vec3(0, 0, -0.02), Vec3::UnitX(), "hip_roll");
    b.link(side + "_hip_roll_link", "hip_roll_link", {1, 1, 1}, 1.0, Vec3::Zero(),
           Vec3(0, kHalfPi, 0));
  }
  for (const auto& [side, sy] : sides) {
    b.revolute(side + "_shoulder_pitch_joint", "torso_link", side + "_shoulder_pitch_link",
               Vec3(0, sy * 0.155 * tau, 0.16 * tau), Vec3::UnitY(), "shoulder_pitch");
    b.link(side + "_shoulder_pitch_link", "shoulder_pitch_link", {1, 1, 1}, 1.0);
    b.revolute(side + "_shoulder_roll_joint", side + "_shoulder_pitch_link",
               side + "_shoulder_roll_link", Vec3(0, sy * 0.04, 0), Vec3::UnitX(), "shoulder_roll");
    b.link(side + "_shoulder_roll_link", "shoulder_roll_link", {1, 1, 1}, 1.0);
    b.revolute(side + "_shoulder_yaw_joint", side + "_shoulder_roll_link", side + "_upper_arm_link",
               Vec3(0, 0, -0.04), Vec3::UnitZ(), "shoulder_yaw");
    b.link(side + "_upper_arm_link", "upper_arm", {1, 1, 1}, 1.0, Vec3(0, 0, -0.075));
    b.revolute(side + "_elbow_joint", side + "_upper_arm_link", side + "_forearm_link",
               Vec3(0, 0, -0.15), Vec3::UnitY(), "elbow");
    b.link(side + "_forearm_link", "forearm", {1, 1, 1}, 1.0, Vec3(0, 0, -0.075));
  }
  for (const auto& [side, sy] : sides) {
    b.revolute(side + "_hip_pitch_joint", side + "_hip_roll_link", side + "_thigh_link",
               Vec3(0, 0, -0.02), Vec3::UnitY(), "hip_pitch");
    b.link(side + "_thigh_link", "thigh", {t, 1, 1}, t, Vec3(0, 0, -thigh_len / 2));
  }
  for (const auto& [side, sy] : sides) {
    std::string parent = side + "_thigh_link";
    Vec3 origin(0, 0, -thigh_len);
    for (int i = 0; i < k; ++i) {
      const std::string child = side + "_calf" + knee_suffix(i) + "_link";
      b.revolute(side + "_knee" + knee_suffix(i) + "_joint", parent, child, origin, Vec3::UnitY(),
                 "knee");
      b.link(child, "calf", {c / k, 1, 1}, c / k, Vec3(0, 0, -seg_len / 2));
      parent = child;
      origin = Vec3(0, 0, -seg_len);
    }
  }
  for (const auto& [side, sy] : sides) {
    const std::string parent = k > 0 ? side + "_calf" + knee_suffix(k - 1) + "_link" : side + "_thigh_link";
    const Vec3 origin = k > 0 ? Vec3(0, 0, -seg_len) : Vec3(0, 0, -thigh_len);
    b.revolute(side + "_ankle_joint", parent, side + "_foot", origin, Vec3::UnitY(), "ankle");
    b.link(side + "_foot", "foot", {f, 1, 1}, f, Vec3(0.04 * f, 0, -0.012));
  }
  return b.finish(std::move(id));
}

}  // namespace

const BaseUnitTable& BaseUnitTable::reference() {
  static const BaseUnitTable table = make_reference_table();
  return table;
}

const LinkUnit& BaseUnitTable::link(MorphologyClass c, std::string_view unit) const {
  auto it = links.find(unit_key(c, unit));
  if (it == links.end()) throw UnsupportedVariation("no link unit " + unit_key(c, unit));
  return it->second;
}

const JointUnit& BaseUnitTable::joint(MorphologyClass c, std::string_view unit) const {
  auto it = joints.find(unit_key(c, unit));
  if (it == joints.end()) throw UnsupportedVariation("no joint unit " + unit_key(c, unit));
  return it->second;
}

void check_variation(MorphologyClass c, const VariationSpec& v) {
  using namespace variation_grid;
  auto fail = [](const std::string& what) { throw UnsupportedVariation(what); };
  if (std::find(kKneeCounts.begin(), kKneeCounts.end(), v.knee_joint_count) == kKneeCounts.end()) {
    fail("knee_joint_count " + std::to_string(v.knee_joint_count) + " not in {0,1,2,3}");
  }
  if (!in_set(v.all_link_scale, kAllLinkScales)) fail("all_link_scale " + format_double(v.all_link_scale));
  if (!in_set(v.thigh_length_scale, kLengthScales)) {
    fail("thigh_length_scale " + format_double(v.thigh_length_scale));
  }
  if (!in_set(v.calf_length_scale, kLengthScales)) {
    fail("calf_length_scale " + format_double(v.calf_length_scale));
  }
  if (!in_set(v.foot_size_scale, kFootScales)) fail("foot_size_scale " + format_double(v.foot_size_scale));
  if (!in_set(v.knee_limit_scale, kKneeLimitScales)) {
    fail("knee_limit_scale " + format_double(v.knee_limit_scale));
  }
  if (c == MorphologyClass::kHumanoid) {
    if (!v.torso_size_scale) fail("humanoid variation needs torso_size_scale");
    if (!in_set(*v.torso_size_scale, kTorsoScales)) {
      fail("torso_size_scale " + format_double(*v.torso_size_scale));
    }
  } else if (v.torso_size_scale) {
    fail("torso_size_scale is humanoid only");
  }
}

std::vector<VariationSpec> enumerate_variations(MorphologyClass c) {
  using namespace variation_grid;
  std::vector<double> torso;
  if (c == MorphologyClass::kHumanoid) {
    torso.assign(kTorsoScales.begin(), kTorsoScales.end());
  } else {
    torso.push_back(std::nan(""));
  }
  std::vector<VariationSpec> out;
  for (int knees : kKneeCounts)
    for (double all : kAllLinkScales)
      for (double thigh : kLengthScales)
        for (double calf : kLengthScales)
          for (double foot : kFootScales)
            for (double ts : torso)
              for (double kl : kKneeLimitScales) {
                VariationSpec v;
                v.knee_joint_count = knees;
                v.all_link_scale = all;
                v.thigh_length_scale = thigh;
                v.calf_length_scale = calf;
                v.foot_size_scale = foot;
                if (!std::isnan(ts)) v.torso_size_scale = ts;
                v.knee_limit_scale = kl;
                out.push_back(v);
              }
  return out;
}

VariationSpec reference_variation(MorphologyClass c) {
  VariationSpec v;
  if (c == MorphologyClass::kHumanoid) v.torso_size_scale = 1.0;
  return v;
}

Embodiment build_embodiment(MorphologyClass c, const VariationSpec& v, const BaseUnitTable& base,
                            std::string id) {
  check_variation(c, v);
  if (id.empty()) id = std::string(to_string(c));
  switch (c) {
    case MorphologyClass::kHumanoid:
      return build_humanoid(v, base, std::move(id));
    case MorphologyClass::kQuadruped:
      return build_quadruped(v, base, std::move(id));
    case MorphologyClass::kHexapod:
      return build_hexapod(v, base, std::move(id));
  }
  throw UnsupportedVariation("unknown class");
}

Embodiment apply_knee_limit_scale(const Embodiment& e, double scale) {
  if (!(scale > 0.0)) throw UnsupportedVariation("knee limit scale must be positive");
  Embodiment out = e;
  // q + 1 * (lower - q) need not round back to lower.
  if (scale == 1.0) return out;
  for (auto& j : out.joints) {
    if (!j.actuated() || !is_knee_joint(j.name)) continue;
    const double q = j.nominal_angle;
    j.lower = q + scale * (j.lower - q);
    j.upper = q + scale * (j.upper - q);
  }
  out.variation.knee_limit_scale *= scale;
  return out;
}

// --- dataset ----------------------------------------------------------------

int dataset_class_size(MorphologyClass c) {
  switch (c) {
    case MorphologyClass::kHumanoid:
      return kHumanoidCount;
    case MorphologyClass::kQuadruped:
      return kQuadrupedCount;
    case MorphologyClass::kHexapod:
      return kHexapodCount;
  }
  return 0;
}

std::vector<const ManifestEntry*> DatasetManifest::entries_of(MorphologyClass c) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.cls == c) out.push_back(&e);
  }
  return out;
}

const ManifestEntry* DatasetManifest::find(std::string_view id) const {
  for (const auto& e : entries) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

namespace {
std::string make_id(MorphologyClass c, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_%03d", index);
  return std::string(to_string(c)) + buf;
}
}  // namespace

GeneratedDataset generate_dataset(std::uint64_t seed) {
  GeneratedDataset ds;
  ds.manifest.seed = seed;
  ds.manifest.tool_version = EMBSCALE_VERSION;
  Rng root(seed);
  for (MorphologyClass c : kAllClasses) {
    Rng rng = root.fork(static_cast<std::uint64_t>(c));
    std::vector<VariationSpec> grid = enumerate_variations(c);
    const VariationSpec ref = reference_variation(c);
    std::erase_if(grid, [&](const VariationSpec& v) { return v == ref; });
    shuffle(grid, rng);
    const int n = dataset_class_size(c);
    for (int i = 0; i < n; ++i) {
      ManifestEntry entry{make_id(c, i), c, grid[static_cast<std::size_t>(i)]};
      ds.embodiments.push_back(build_embodiment(c, entry.variation, BaseUnitTable::reference(), entry.id));
      ds.manifest.entries.push_back(std::move(entry));
    }
  }
  return ds;
}

std::vector<Embodiment> build_from_manifest(const DatasetManifest& m) {
  std::vector<Embodiment> out;
  out.reserve(m.entries.size());
  for (const auto& entry : m.entries) {
    out.push_back(build_embodiment(entry.cls, entry.variation, BaseUnitTable::reference(), entry.id));
  }
  return out;
}

const std::vector<int>& reference_test_indices(MorphologyClass c) {
  static const std::vector<int> humanoid = {
      0,   7,   12,  20,  31,  32,  37,  41,  46,  47,  48,  50,  51,  55,  63,  71,  72,  75,
      97,  104, 111, 113, 122, 124, 128, 132, 133, 144, 149, 154, 155, 158, 161, 163, 166, 169,
      170, 181, 183, 197, 204, 207, 215, 222, 226, 229, 241, 244, 248, 250, 252, 258, 260, 261,
      266, 272, 276, 278, 280, 282, 286, 290, 298, 308, 312, 313, 316, 320, 327, 342};
  static const std::vector<int> legged = {
      0,   7,   8,   20,  31,  32,  37,  41,  46,  47,  48,  50,  51,  55,  71,  72,  75,
      97,  104, 111, 113, 122, 124, 128, 132, 133, 144, 149, 154, 155, 158, 161, 163, 166,
      169, 170, 181, 183, 197, 204, 207, 215, 222, 226, 229, 241, 244, 248, 250, 252, 258,
      260, 261, 266, 272, 278, 280, 282, 286, 290, 298, 308, 312, 313, 316, 320, 327};
  return c == MorphologyClass::kHumanoid ? humanoid : legged;
}

namespace {
ClassSplit complement_split(int n, std::vector<int> test) {
  std::sort(test.begin(), test.end());
  ClassSplit s;
  s.test = std::move(test);
  std::size_t t = 0;
  for (int i = 0; i < n; ++i) {
    if (t < s.test.size() && s.test[t] == i) {
      ++t;
    } else {
      s.train.push_back(i);
    }
  }
  return s;
}
}  // namespace

std::map<MorphologyClass, ClassSplit> split_dataset(const DatasetManifest& m, std::uint64_t seed) {
  std::map<MorphologyClass, ClassSplit> out;
  bool reference_sized = true;
  for (MorphologyClass c : kAllClasses) {
    if (static_cast<int>(m.entries_of(c).size()) != dataset_class_size(c)) reference_sized = false;
  }
  for (MorphologyClass c : kAllClasses) {
    const int n = static_cast<int>(m.entries_of(c).size());
    if (n == 0) continue;
    if (seed == kReferenceSeed && reference_sized) {
      out[c] = complement_split(n, reference_test_indices(c));
      continue;
    }
    // The stream depends only on (seed, n): equal-sized classes share a split.
    Rng rng(splitmix64(seed) ^ splitmix64(static_cast<std::uint64_t>(n)));
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    shuffle(perm, rng);
    const int test_size = (2 * n + 9) / 10;
    out[c] = complement_split(n, std::vector<int>(perm.begin(), perm.begin() + test_size));
  }
  return out;
}

// --- manifest file ----------------------------------------------------------

namespace {

constexpr const char* kDescriptorLayout =
    "pos_x,pos_y,pos_z,axis_x,axis_y,axis_z,nominal_angle,max_torque,max_velocity,"
    "lower,upper,kp,kd,action_scale,total_mass,dim_x,dim_y,dim_z";
constexpr const char* kGeneralLayout =
    "lin_vel_x,lin_vel_y,lin_vel_z,gravity_x,gravity_y,gravity_z,cmd_x,cmd_y,cmd_yaw,kp,kd,"
    "action_scale,total_mass,dim_x,dim_y,dim_z,joint_count,feet_size,reserved,reserved";

std::string variation_text(const VariationSpec& v) {
  std::string s = "knees=" + std::to_string(v.knee_joint_count) +
                  " all=" + format_double(v.all_link_scale) +
                  " thigh=" + format_double(v.thigh_length_scale) +
                  " calf=" + format_double(v.calf_length_scale) +
                  " foot=" + format_double(v.foot_size_scale);
  if (v.torso_size_scale) s += " torso=" + format_double(*v.torso_size_scale);
  s += " knee_limit=" + format_double(v.knee_limit_scale);
  return s;
}

std::string join_indices(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::string> words(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

int parse_int(const std::string& s) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw ParseError("not an integer: '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw ParseError("not an integer: '" + s + "'");
  }
}

}  // namespace

void write_manifest(std::ostream& out, const DatasetManifest& m) {
  out << "# embscale dataset manifest\n";
  out << "format_version 1\n";
  out << "tool_version " << m.tool_version << "\n";
  out << "seed " << m.seed << "\n";
  out << "descriptor_layout " << kDescriptorLayout << "\n";
  out << "general_layout " << kGeneralLayout << "\n";
  for (MorphologyClass c : kAllClasses) {
    out << "class " << to_string(c) << " " << m.entries_of(c).size() << "\n";
  }
  for (const auto& e : m.entries) {
    out << "embodiment " << e.id << " " << to_string(e.cls) << " " << variation_text(e.variation) << "\n";
  }
  for (const auto& [c, s] : m.splits) {
    out << "test " << to_string(c) << " " << join_indices(s.test) << "\n";
    out << "train " << to_string(c) << " " << join_indices(s.train) << "\n";
  }
}

DatasetManifest read_manifest(std::istream& in) {
  DatasetManifest m;
  std::map<MorphologyClass, int> declared;
  std::string line;
  int line_no = 0;
  bool versioned = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto w = words(t);
    const std::string& key = w[0];
    auto need = [&](std::size_t n) {
      if (w.size() < n) throw ParseError("manifest line " + std::to_string(line_no) + ": too few fields");
    };
    if (key == "format_version") {
      need(2);
      if (w[1] != "1") throw ParseError("unsupported manifest format_version " + w[1]);
      versioned = true;
    } else if (key == "tool_version") {
      need(2);
      m.tool_version = w[1];
    } else if (key == "seed") {
      need(2);
      try {
        m.seed = std::stoull(w[1]);
      } catch (const std::logic_error&) {
        throw ParseError("bad seed '" + w[1] + "'");
      }
    } else if (key == "class") {
      need(3);
      declared[class_from_string(w[1])] = parse_int(w[2]);
    } else if (key == "embodiment") {
      need(3);
      ManifestEntry e;
      e.id = w[1];
      e.cls = class_from_string(w[2]);
      for (std::size_t i = 3; i < w.size(); ++i) {
        const auto eq = w[i].find('=');
        if (eq == std::string::npos) throw ParseError("bad variation field '" + w[i] + "'");
        const std::string name = w[i].substr(0, eq);
        const std::string value = w[i].substr(eq + 1);
        if (name == "knees") e.variation.knee_joint_count = parse_int(value);
        else if (name == "all") e.variation.all_link_scale = parse_double(value);
        else if (name == "thigh") e.variation.thigh_length_scale = parse_double(value);
        else if (name == "calf") e.variation.calf_length_scale = parse_double(value);
        else if (name == "foot") e.variation.foot_size_scale = parse_double(value);
        else if (name == "torso") e.variation.torso_size_scale = parse_double(value);
        else if (name == "knee_limit") e.variation.knee_limit_scale = parse_double(value);
        else throw ParseError("unknown variation field '" + name + "'");
      }
      m.entries.push_back(std::move(e));
    } else if (key == "test" || key == "train") {
      need(2);
      ClassSplit& s = m.splits[class_from_string(w[1])];
      auto& dst = key == "test" ? s.test : s.train;
      for (std::size_t i = 2; i < w.size(); ++i) dst.push_back(parse_int(w[i]));
    } else if (key == "descriptor_layout" || key == "general_layout") {
      // informational
    } else {
      throw ParseError("manifest line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (!versioned) throw ParseError("manifest lacks format_version");
  for (const auto& [c, n] : declared) {
    if (static_cast<int>(m.entries_of(c).size()) != n) {
      throw SizeMismatch("manifest declares " + std::to_string(n) + " " + std::string(to_string(c)) +
                         " embodiments but lists " + std::to_string(m.entries_of(c).size()));
    }
  }
  std::set<std::string> ids;
  for (const auto& e : m.entries) {
    if (!ids.insert(e.id).second) throw ParseError("duplicate embodiment id '" + e.id + "'");
  }
  for (const auto& [c, s] : m.splits) {
    const std::size_t n = m.entries_of(c).size();
    if (s.train.size() + s.test.size() != n) {
      throw SizeMismatch("split for " + std::string(to_string(c)) + " does not cover the class");
    }
  }
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_manifest(out, m);
  if (!out) throw IoError("write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  return read_manifest(in);
}

// --- statistics -------------------------------------------------------------

double mean_leg_length(const Embodiment& e) {
  const auto feet = foot_links(e);
  if (feet.empty() || e.links.empty()) return 0.0;
  const KinematicState ks = forward_kinematics(e, nominal_angles(e));
  const std::string& root = e.links.front().name;
  double total = 0.0;
  for (std::size_t f : feet) {
    std::string link = e.links[f].name;
    std::optional<std::size_t> top;
    while (true) {
      auto it = std::find_if(e.joints.begin(), e.joints.end(),
                             [&](const JointSpec& j) { return j.child_link == link; });
      if (it == e.joints.end()) break;
      top = static_cast<std::size_t>(it - e.joints.begin());
      if (it->parent_link == root) break;
      link = it->parent_link;
    }
    if (top) total += (ks.link_poses[f].position - ks.joint_positions[*top]).norm();
  }
  return total / static_cast<double>(feet.size());
}

int StatisticsReport::total(MorphologyClass c, std::string_view parameter) const {
  int n = 0;
  for (const auto& r : rows) {
    if (r.cls == c && r.parameter == parameter) n += r.count;
  }
  return n;
}

StatisticsReport dataset_statistics(const std::vector<Embodiment>& embodiments) {
  if (embodiments.empty()) throw DegenerateInput("dataset_statistics needs at least one embodiment");
  // (class, parameter) -> bin value -> count
  std::map<std::pair<MorphologyClass, std::string>, std::map<double, int>> hist;
  for (const auto& e : embodiments) {
    const double leg = std::floor(mean_leg_length(e) / kLegLengthBin + 1e-9) * kLegLengthBin;
    ++hist[{e.cls, "leg_length_m"}][leg];
    ++hist[{e.cls, "joint_count"}][static_cast<double>(e.num_actuated())];
    ++hist[{e.cls, "knee_count"}][e.variation.knee_joint_count];
    ++hist[{e.cls, "knee_limit_scale"}][e.variation.knee_limit_scale];
  }
  StatisticsReport r;
  for (const auto& [key, bins] : hist) {
    for (const auto& [bin, count] : bins) {
      std::string label;
      if (key.second == "leg_length_m") {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", bin);
        label = buf;
      } else {
        label = format_double(bin);
      }
      r.rows.push_back({key.first, key.second, label, count});
    }
  }
  return r;
}

void write_statistics_csv(std::ostream& out, const StatisticsReport& r) {
  out << "class,parameter,bin,count\n";
  for (const auto& row : r.rows) {
    out << to_string(row.cls) << "," << row.parameter << "," << row.bin << "," << row.count << "\n";
  }
}

}  // namespace embscale
