#ifndef EMBSCALE_EMBODIMENT_HPP_
#define EMBSCALE_EMBODIMENT_HPP_

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "embscale/common.hpp"

namespace embscale {

enum class MorphologyClass { kHumanoid = 0, kQuadruped = 1, kHexapod = 2 };

inline constexpr std::array<MorphologyClass, 3> kAllClasses = {
    MorphologyClass::kHumanoid, MorphologyClass::kQuadruped, MorphologyClass::kHexapod};

std::string_view to_string(MorphologyClass c);
MorphologyClass class_from_string(std::string_view name);

// Primitive link geometry. Dimensions follow the generator's tables:
// sphere (radius), cylinder (length, radius), box (length, width, height).
// Cylinders extend along the link-local z axis, as in URDF.
struct Shape {
  enum class Kind { kSphere, kCylinder, kBox };
  Kind kind = Kind::kSphere;
  std::array<double, 3> dims = {0.0, 0.0, 0.0};

  static Shape sphere(double radius) { return {Kind::kSphere, {radius, 0.0, 0.0}}; }
  static Shape cylinder(double length, double radius) {
    return {Kind::kCylinder, {length, radius, 0.0}};
  }
  static Shape box(double length, double width, double height) {
    return {Kind::kBox, {length, width, height}};
  }

  int dim_count() const;
  double volume() const;
  bool operator==(const Shape&) const = default;
};

struct LinkSpec {
  std::string name;
  Shape shape;
  double mass = 0.0;            // kg
  Vec3 origin_xyz = Vec3::Zero();  // geometry offset in the link frame, m
  Vec3 origin_rpy = Vec3::Zero();  // geometry orientation in the link frame
};

enum class JointType { kRevolute, kFixed };

struct JointSpec {
  std::string name;
  JointType type = JointType::kRevolute;
  std::string parent_link;
  std::string child_link;
  Vec3 origin_xyz = Vec3::Zero();  // relative to the parent link frame
  Vec3 origin_rpy = Vec3::Zero();
  Vec3 axis = Vec3::UnitX();
  double lower = 0.0;  // rad
  double upper = 0.0;  // rad
  double max_torque = 0.0;    // N m
  double max_velocity = 0.0;  // rad/s
  double nominal_angle = 0.0;  // rad

  bool actuated() const { return type == JointType::kRevolute; }
};

// The variation record a generated embodiment was built from. Imported robots
// carry the identity record.
struct VariationSpec {
  int knee_joint_count = 1;
  double all_link_scale = 1.0;
  double thigh_length_scale = 1.0;
  double calf_length_scale = 1.0;
  double foot_size_scale = 1.0;
  std::optional<double> torso_size_scale;  // humanoid only
  double knee_limit_scale = 1.0;

  bool operator==(const VariationSpec&) const = default;
};

struct Embodiment {
  std::string id;
  MorphologyClass cls = MorphologyClass::kQuadruped;
  std::vector<LinkSpec> links;
  std::vector<JointSpec> joints;  // construction order, includes fixed joints
  VariationSpec variation;

  // Derived by update_derived(); never set by hand.
  double total_mass = 0.0;
  Vec3 bounding_dims = Vec3::Zero();
  double nominal_height = 0.0;

  // Indices into `joints` of the actuated (revolute) joints. This is the
  // canonical index space shared by descriptors, observations and actions.
  std::vector<std::size_t> actuated_joints() const;
  std::size_t num_actuated() const;
  const LinkSpec* find_link(std::string_view name) const;
  const JointSpec* find_joint(std::string_view name) const;
};

// Recomputes total mass, bounding box and nominal height from links/joints.
void update_derived(Embodiment& e);

// PD gains and action scale shared by all embodiments of a class.
struct ClassControlConstants {
  double kp = 0.0;
  double kd = 0.0;
  double action_scale = 0.0;
};

ClassControlConstants control_constants(MorphologyClass c);

// --- kinematics -------------------------------------------------------------

struct Pose {
  Vec3 position = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
};

Mat3 rpy_to_matrix(const Vec3& rpy);

struct KinematicState {
  std::vector<Pose> link_poses;      // per link, root frame
  std::vector<Vec3> joint_positions;  // per joint (all joints), root frame
  std::vector<Vec3> joint_axes;       // per joint, root frame
};

// Forward kinematics in the root frame. `angles` holds one value per actuated
// joint in actuated order.
KinematicState forward_kinematics(const Embodiment& e, std::span<const double> angles);

// Axis-aligned bounds (min, max) of all link geometries for the given pose.
std::pair<Vec3, Vec3> geometry_bounds(const Embodiment& e, const KinematicState& ks);

// Centre of mass in the root frame for the given pose.
Vec3 center_of_mass(const Embodiment& e, const KinematicState& ks);

// Topological joint order (parents before children).
std::vector<std::size_t> topological_joint_order(const Embodiment& e);

// --- feet and knees ---------------------------------------------------------

bool is_knee_joint(std::string_view joint_name);
bool is_left_side(std::string_view name);

// Links treated as feet: names containing "foot", otherwise the leaf links.
// Link order; generated robots list feet as left/right pairs.
std::vector<std::size_t> foot_links(const Embodiment& e);

// Characteristic foot length: sphere radius, box length, cylinder length.
double foot_size(const Embodiment& e);

// --- descriptors ------------------------------------------------------------

inline constexpr int kJointDescriptorDim = 18;
inline constexpr int kGeneralDescriptorDim = 9;
inline constexpr int kGeneralObservationDim = 20;
inline constexpr int kJointObservationDim = 3;

// Component layout of one joint descriptor row.
namespace jd {
inline constexpr int kPosition = 0;   // 3: joint position at nominal pose, root frame
inline constexpr int kAxis = 3;       // 3: rotation axis at nominal pose, root frame
inline constexpr int kNominal = 6;
inline constexpr int kMaxTorque = 7;
inline constexpr int kMaxVelocity = 8;
inline constexpr int kLower = 9;
inline constexpr int kUpper = 10;
inline constexpr int kKp = 11;
inline constexpr int kKd = 12;
inline constexpr int kActionScale = 13;
inline constexpr int kMass = 14;
inline constexpr int kDims = 15;  // 3
}  // namespace jd

// Component layout of the static general descriptor:
// kp, kd, action scale, total mass, dims (3), joint count, feet size.
using GeneralDescriptor = std::array<double, kGeneralDescriptorDim>;

struct EmbodimentDescriptor {
  Eigen::MatrixXd joints;  // J x 18, actuated order
  GeneralDescriptor general{};
};

EmbodimentDescriptor descriptor_of(const Embodiment& e, const ClassControlConstants& ctrl);
inline EmbodimentDescriptor descriptor_of(const Embodiment& e) {
  return descriptor_of(e, control_constants(e.cls));
}

// --- nominal pose -----------------------------------------------------------

// Standing angle for a joint of the given class, looked up by joint name.
// Additional knee joints ("knee2", "knee3") map to 0.
double table_nominal_angle(MorphologyClass c, std::string_view joint_name);

std::map<std::string, double> nominal_configuration(const Embodiment& e);
std::vector<double> nominal_angles(const Embodiment& e);  // actuated order

// --- validation -------------------------------------------------------------

struct Violation {
  std::string subject;  // link or joint name, or "robot"
  std::string message;
};
using ValidityReport = std::vector<Violation>;

ValidityReport validate(const Embodiment& e);
// Throws InvalidEmbodiment listing the first violations when e is not valid.
void require_valid(const Embodiment& e);

// Field-wise comparison with a relative/absolute tolerance on floats.
bool approx_equal(const Embodiment& a, const Embodiment& b, double tol = 1e-9);

}  // namespace embscale

#endif  // EMBSCALE_EMBODIMENT_HPP_
