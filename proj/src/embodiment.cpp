#include "embscale/embodiment.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <set>
#include <unordered_map>

namespace embscale {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool contains(std::string_view haystack, std::string_view needle) {
  return haystack.find(needle) != std::string_view::npos;
}

bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

bool close(const Vec3& a, const Vec3& b, double tol) {
  for (int i = 0; i < 3; ++i) {
    if (!close(a[i], b[i], tol)) return false;
  }
  return true;
}

}  // namespace

std::string_view to_string(MorphologyClass c) {
  switch (c) {
    case MorphologyClass::kHumanoid:
      return "humanoid";
    case MorphologyClass::kQuadruped:
      return "quadruped";
    case MorphologyClass::kHexapod:
      return "hexapod";
  }
  return "unknown";
}

MorphologyClass class_from_string(std::string_view name) {
  const std::string n = lower(name);
  if (n == "humanoid") return MorphologyClass::kHumanoid;
  if (n == "quadruped") return MorphologyClass::kQuadruped;
  if (n == "hexapod") return MorphologyClass::kHexapod;
  throw ParseError("unknown morphology class '" + std::string(name) + "'");
}

int Shape::dim_count() const {
  switch (kind) {
    case Kind::kSphere:
      return 1;
    case Kind::kCylinder:
      return 2;
    case Kind::kBox:
      return 3;
  }
  return 0;
}

double Shape::volume() const {
  switch (kind) {
    case Kind::kSphere:
      return 4.0 / 3.0 * std::numbers::pi * dims[0] * dims[0] * dims[0];
    case Kind::kCylinder:
      return std::numbers::pi * dims[1] * dims[1] * dims[0];
    case Kind::kBox:
      return dims[0] * dims[1] * dims[2];
  }
  return 0.0;
}

std::vector<std::size_t> Embodiment::actuated_joints() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < joints.size(); ++i) {
    if (joints[i].actuated()) out.push_back(i);
  }
  return out;
}

std::size_t Embodiment::num_actuated() const {
  return static_cast<std::size_t>(
      std::count_if(joints.begin(), joints.end(), [](const JointSpec& j) { return j.actuated(); }));
}

const LinkSpec* Embodiment::find_link(std::string_view name) const {
  for (const auto& l : links) {
    if (l.name == name) return &l;
  }
  return nullptr;
}

const JointSpec* Embodiment::find_joint(std::string_view name) const {
  for (const auto& j : joints) {
    if (j.name == name) return &j;
  }
  return nullptr;
}

ClassControlConstants control_constants(MorphologyClass c) {
  switch (c) {
    case MorphologyClass::kHumanoid:
      return {60.0, 2.0, 0.75};
    case MorphologyClass::kQuadruped:
      return {20.0, 0.5, 0.3};
    case MorphologyClass::kHexapod:
      return {25.0, 0.5, 0.3};
  }
  return {};
}

// --- kinematics -------------------------------------------------------------

Mat3 rpy_to_matrix(const Vec3& rpy) {
  return (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

std::vector<std::size_t> topological_joint_order(const Embodiment& e) {
  std::unordered_map<std::string, std::vector<std::size_t>> children_of;
  std::set<std::string> child_links;
  for (std::size_t i = 0; i < e.joints.size(); ++i) {
    children_of[e.joints[i].parent_link].push_back(i);
    child_links.insert(e.joints[i].child_link);
  }
  std::vector<std::size_t> order;
  std::vector<std::string> frontier;
  for (const auto& l : e.links) {
    if (!child_links.count(l.name)) frontier.push_back(l.name);
  }
  std::set<std::string> visited;
  for (std::size_t f = 0; f < frontier.size(); ++f) {
    const std::string link = frontier[f];
    if (!visited.insert(link).second) continue;
    auto it = children_of.find(link);
    if (it == children_of.end()) continue;
    for (std::size_t j : it->second) {
      order.push_back(j);
      frontier.push_back(e.joints[j].child_link);
    }
  }
  return order;
}

KinematicState forward_kinematics(const Embodiment& e, std::span<const double> angles) {
  if (angles.size() != e.num_actuated()) {
    throw ShapeMismatch("forward_kinematics: expected " + std::to_string(e.num_actuated()) +
                        " angles, got " + std::to_string(angles.size()));
  }
  std::unordered_map<std::string, std::size_t> link_index;
  for (std::size_t i = 0; i < e.links.size(); ++i) link_index[e.links[i].name] = i;
  std::vector<double> joint_angle(e.joints.size(), 0.0);
  {
    std::size_t a = 0;
    for (std::size_t i = 0; i < e.joints.size(); ++i) {
      if (e.joints[i].actuated()) joint_angle[i] = angles[a++];
    }
  }

  KinematicState ks;
  ks.link_poses.assign(e.links.size(), Pose{});
  ks.joint_positions.assign(e.joints.size(), Vec3::Zero());
  ks.joint_axes.assign(e.joints.size(), Vec3::UnitX());
  for (std::size_t j : topological_joint_order(e)) {
    const JointSpec& js = e.joints[j];
    auto pit = link_index.find(js.parent_link);
    auto cit = link_index.find(js.child_link);
    if (pit == link_index.end() || cit == link_index.end()) {
      throw InvalidEmbodiment("joint '" + js.name + "' references an unknown link");
    }
    const Pose& parent = ks.link_poses[pit->second];
    const Mat3 frame = parent.rotation * rpy_to_matrix(js.origin_rpy);
    Pose child;
    child.position = parent.position + parent.rotation * js.origin_xyz;
    child.rotation = frame;
    ks.joint_axes[j] = frame * js.axis;
    if (js.actuated()) {
      child.rotation = frame * Eigen::AngleAxisd(joint_angle[j], js.axis.normalized()).toRotationMatrix();
    }
    ks.joint_positions[j] = child.position;
    ks.link_poses[cit->second] = child;
  }
  return ks;
}

std::pair<Vec3, Vec3> geometry_bounds(const Embodiment& e, const KinematicState& ks) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::size_t i = 0; i < e.links.size(); ++i) {
    const LinkSpec& l = e.links[i];
    const Pose& p = ks.link_poses[i];
    const Vec3 center = p.position + p.rotation * l.origin_xyz;
    const Mat3 r = p.rotation * rpy_to_matrix(l.origin_rpy);
    Vec3 ext;
    switch (l.shape.kind) {
      case Shape::Kind::kSphere:
        ext.setConstant(l.shape.dims[0]);
        break;
      case Shape::Kind::kCylinder: {
        const double half_len = 0.5 * l.shape.dims[0];
        const double radius = l.shape.dims[1];
        for (int k = 0; k < 3; ++k) {
          const double c = std::abs(r(k, 2));
          ext[k] = c * half_len + radius * std::sqrt(std::max(0.0, 1.0 - c * c));
        }
        break;
      }
      case Shape::Kind::kBox: {
        const Vec3 half(0.5 * l.shape.dims[0], 0.5 * l.shape.dims[1], 0.5 * l.shape.dims[2]);
        ext = r.cwiseAbs() * half;
        break;
      }
    }
    lo = lo.cwiseMin(center - ext);
    hi = hi.cwiseMax(center + ext);
  }
  return {lo, hi};
}

Vec3 center_of_mass(const Embodiment& e, const KinematicState& ks) {
  Vec3 acc = Vec3::Zero();
  double m = 0.0;
  for (std::size_t i = 0; i < e.links.size(); ++i) {
    const Pose& p = ks.link_poses[i];
    acc += e.links[i].mass * (p.position + p.rotation * e.links[i].origin_xyz);
    m += e.links[i].mass;
  }
  return m > 0.0 ? Vec3(acc / m) : Vec3::Zero();
}

void update_derived(Embodiment& e) {
  double mass = 0.0;
  for (const auto& l : e.links) mass += l.mass;
  e.total_mass = mass;
  if (e.links.empty()) {
    e.bounding_dims.setZero();
    e.nominal_height = 0.0;
    return;
  }
  const std::vector<double> q = nominal_angles(e);
  const KinematicState ks = forward_kinematics(e, q);
  const auto [lo, hi] = geometry_bounds(e, ks);
  e.bounding_dims = hi - lo;
  e.nominal_height = -lo.z();
}

// --- feet and knees ---------------------------------------------------------

bool is_knee_joint(std::string_view joint_name) {
  const std::string n = lower(joint_name);
  return contains(n, "knee") || contains(n, "calf_joint");
}

namespace {
// Index of a knee inside a multi-knee chain: "knee" -> 1, "knee2" -> 2, ...
int knee_index(std::string_view joint_name) {
  const std::string n = lower(joint_name);
  std::size_t pos = n.find("knee");
  if (pos == std::string::npos) return 1;
  pos += 4;
  if (pos < n.size() && std::isdigit(static_cast<unsigned char>(n[pos]))) return n[pos] - '0';
  return 1;
}
}  // namespace

bool is_left_side(std::string_view name) {
  const std::string n = lower(name);
  if (contains(n, "left")) return true;
  if (contains(n, "right")) return false;
  return n.size() >= 2 && n[1] == 'l' && (n[0] == 'f' || n[0] == 'm' || n[0] == 'r') &&
         (n.size() == 2 || n[2] == '_');
}

std::vector<std::size_t> foot_links(const Embodiment& e) {
  std::vector<std::size_t> feet;
  for (std::size_t i = 0; i < e.links.size(); ++i) {
    if (contains(lower(e.links[i].name), "foot")) feet.push_back(i);
  }
  if (!feet.empty()) return feet;
  std::set<std::string> parents;
  for (const auto& j : e.joints) parents.insert(j.parent_link);
  for (std::size_t i = 0; i < e.links.size(); ++i) {
    if (!parents.count(e.links[i].name) && !e.joints.empty()) feet.push_back(i);
  }
  return feet;
}

double foot_size(const Embodiment& e) {
  const auto feet = foot_links(e);
  if (feet.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t f : feet) acc += e.links[f].shape.dims[0];
  return acc / static_cast<double>(feet.size());
}

// --- descriptors ------------------------------------------------------------

EmbodimentDescriptor descriptor_of(const Embodiment& e, const ClassControlConstants& ctrl) {
  require_valid(e);
  const auto act = e.actuated_joints();
  const std::vector<double> q = nominal_angles(e);
  const KinematicState ks = forward_kinematics(e, q);

  EmbodimentDescriptor d;
  d.joints.resize(static_cast<Eigen::Index>(act.size()), kJointDescriptorDim);
  for (std::size_t r = 0; r < act.size(); ++r) {
    const JointSpec& j = e.joints[act[r]];
    auto row = d.joints.row(static_cast<Eigen::Index>(r));
    row.segment<3>(jd::kPosition) = ks.joint_positions[act[r]].transpose();
    row.segment<3>(jd::kAxis) = ks.joint_axes[act[r]].transpose();
    row[jd::kNominal] = j.nominal_angle;
    row[jd::kMaxTorque] = j.max_torque;
    row[jd::kMaxVelocity] = j.max_velocity;
    row[jd::kLower] = j.lower;
    row[jd::kUpper] = j.upper;
    row[jd::kKp] = ctrl.kp;
    row[jd::kKd] = ctrl.kd;
    row[jd::kActionScale] = ctrl.action_scale;
    row[jd::kMass] = e.total_mass;
    row.segment<3>(jd::kDims) = e.bounding_dims.transpose();
  }
  d.general = {ctrl.kp,
               ctrl.kd,
               ctrl.action_scale,
               e.total_mass,
               e.bounding_dims.x(),
               e.bounding_dims.y(),
               e.bounding_dims.z(),
               static_cast<double>(act.size()),
               foot_size(e)};
  return d;
}

// --- nominal pose -----------------------------------------------------------

double table_nominal_angle(MorphologyClass c, std::string_view joint_name) {
  const std::string n = lower(joint_name);
  if (is_knee_joint(n) && knee_index(n) > 1) return 0.0;
  switch (c) {
    case MorphologyClass::kHumanoid:
      if (contains(n, "hip_pitch")) return -0.4;
      if (is_knee_joint(n)) return 0.8;
      if (contains(n, "ankle")) return -0.4;
      return 0.0;  // torso, shoulders, elbows, hip roll/yaw
    case MorphologyClass::kQuadruped:
      if (is_knee_joint(n)) return -1.5;
      if (contains(n, "thigh")) return n.starts_with("r") ? 1.0 : 0.8;
      if (contains(n, "hip")) return is_left_side(n) ? 0.1 : -0.1;
      return 0.0;
    case MorphologyClass::kHexapod:
      if (is_knee_joint(n) || contains(n, "thigh")) return 0.79;
      return 0.0;
  }
  return 0.0;
}

std::map<std::string, double> nominal_configuration(const Embodiment& e) {
  std::map<std::string, double> out;
  for (const auto& j : e.joints) {
    if (j.actuated()) out[j.name] = j.nominal_angle;
  }
  return out;
}

std::vector<double> nominal_angles(const Embodiment& e) {
  std::vector<double> q;
  q.reserve(e.joints.size());
  for (const auto& j : e.joints) {
    if (j.actuated()) q.push_back(j.nominal_angle);
  }
  return q;
}

// --- validation -------------------------------------------------------------

ValidityReport validate(const Embodiment& e) {
  ValidityReport report;
  auto add = [&](std::string subject, std::string msg) {
    report.push_back({std::move(subject), std::move(msg)});
  };

  if (e.links.empty()) add("robot", "no links");

  std::set<std::string> link_names;
  double mass = 0.0;
  for (const auto& l : e.links) {
    if (!link_names.insert(l.name).second) add(l.name, "duplicate link name");
    for (int k = 0; k < l.shape.dim_count(); ++k) {
      if (!(l.shape.dims[static_cast<std::size_t>(k)] > 0.0)) add(l.name, "non-positive dimension");
    }
    if (!(l.mass > 0.0)) add(l.name, "non-positive mass");
    mass += l.mass;
  }
  if (!e.links.empty() && !close(mass, e.total_mass, 1e-9)) add("robot", "total mass mismatch");

  std::set<std::string> joint_names;
  std::map<std::string, int> child_count;
  for (const auto& j : e.joints) {
    if (!joint_names.insert(j.name).second) add(j.name, "duplicate joint name");
    if (!link_names.count(j.parent_link) || !link_names.count(j.child_link)) {
      add(j.name, "unknown parent or child link");
    }
    if (++child_count[j.child_link] > 1) add(j.name, "non-tree topology");
    if (j.parent_link == j.child_link) add(j.name, "non-tree topology");
    if (j.actuated()) {
      if (!(j.lower < j.upper)) add(j.name, "degenerate limits");
      if (j.nominal_angle < j.lower || j.nominal_angle > j.upper) {
        add(j.name, "nominal angle outside limits");
      }
      if (std::abs(j.axis.norm() - 1.0) > 1e-9) add(j.name, "axis not unit length");
      if (!(j.max_torque > 0.0) || !(j.max_velocity > 0.0)) add(j.name, "non-positive motor limits");
    }
  }

  int roots = 0;
  for (const auto& l : e.links) {
    if (!child_count.count(l.name)) ++roots;
  }
  if (!e.links.empty() && roots != 1) add("robot", "non-tree topology: " + std::to_string(roots) + " roots");
  if (report.empty() && topological_joint_order(e).size() != e.joints.size()) {
    add("robot", "non-tree topology: cycle or unreachable links");
  }
  return report;
}

void require_valid(const Embodiment& e) {
  const ValidityReport r = validate(e);
  if (r.empty()) return;
  std::string msg = "invalid embodiment '" + e.id + "':";
  for (std::size_t i = 0; i < r.size() && i < 5; ++i) {
    msg += " [" + r[i].subject + ": " + r[i].message + "]";
  }
  throw InvalidEmbodiment(msg);
}

bool approx_equal(const Embodiment& a, const Embodiment& b, double tol) {
  if (a.id != b.id || a.cls != b.cls || !(a.variation == b.variation)) return false;
  if (a.links.size() != b.links.size() || a.joints.size() != b.joints.size()) return false;
  for (std::size_t i = 0; i < a.links.size(); ++i) {
    const LinkSpec& x = a.links[i];
    const LinkSpec& y = b.links[i];
    if (x.name != y.name || x.shape.kind != y.shape.kind) return false;
    for (std::size_t k = 0; k < 3; ++k) {
      if (!close(x.shape.dims[k], y.shape.dims[k], tol)) return false;
    }
    if (!close(x.mass, y.mass, tol) || !close(x.origin_xyz, y.origin_xyz, tol) ||
        !close(x.origin_rpy, y.origin_rpy, tol)) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.joints.size(); ++i) {
    const JointSpec& x = a.joints[i];
    const JointSpec& y = b.joints[i];
    if (x.name != y.name || x.type != y.type || x.parent_link != y.parent_link ||
        x.child_link != y.child_link) {
      return false;
    }
    if (!close(x.origin_xyz, y.origin_xyz, tol) || !close(x.origin_rpy, y.origin_rpy, tol) ||
        !close(x.axis, y.axis, tol) || !close(x.lower, y.lower, tol) || !close(x.upper, y.upper, tol) ||
        !close(x.max_torque, y.max_torque, tol) || !close(x.max_velocity, y.max_velocity, tol) ||
        !close(x.nominal_angle, y.nominal_angle, tol)) {
      return false;
    }
  }
  return close(a.total_mass, b.total_mass, tol) && close(a.bounding_dims, b.bounding_dims, tol) &&
         close(a.nominal_height, b.nominal_height, tol);
}

}  // namespace embscale
