#ifndef EMBSCALE_ENV_HPP_
#define EMBSCALE_ENV_HPP_

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "embscale/embodiment.hpp"
#include "embscale/randomization.hpp"
#include "embscale/reward.hpp"
#include "embscale/urma.hpp"

namespace embscale {

// Software joint-limit layer: the target is projected into [lo, hi]; while
// the measured angle is outside, the gains are raised to (60, 1).
struct JointLimitOutput {
  double target = 0.0;
  double kp = 0.0;
  double kd = 0.0;
  bool overridden = false;
};

inline constexpr double kLimitLayerKp = 60.0;
inline constexpr double kLimitLayerKd = 1.0;

JointLimitOutput joint_limit_layer(double target, double measured, double lo, double hi, double kp, double kd);

struct EnvConfig {
  double control_dt = 0.02;  // 50 Hz
  int substeps = 4;          // 200 Hz internal integration
  int horizon = 1000;
  double fall_angle = 1.0;            // rad, roll or pitch
  double fall_height_fraction = 0.4;  // of the nominal height
  double contact_threshold = 0.025;   // m above the lowest foot
  double base_joint_damping = 0.02;   // N m s / rad, added to the randomized joint friction
  double min_joint_inertia = 0.01;    // kg m^2
  bool randomize = true;
  RandomizationRanges ranges;
  // Per-episode command ranges (x, y in m/s, yaw in rad/s).
  Range command_x{-1.0, 1.0};
  Range command_y{-0.5, 0.5};
  Range command_yaw{-1.0, 1.0};
  // Optional restricted bounds per actuated joint enforced through
  // joint_limit_layer; must lie within the hard limits.
  std::vector<std::optional<Range>> restricted_bounds;
};

// Measured observations after noise, calibration offsets and dropout.
struct Observation {
  Vector q;            // joint angles
  Vector qd;           // joint velocities
  Vector prev_action;  // action applied at the previous step
  Vec3 ang_vel = Vec3::Zero();  // trunk (roll, pitch, yaw) rates
  Vec3 gravity = Vec3(0, 0, -1);  // unit gravity direction, trunk frame
  Vec3 command = Vec3::Zero();
  // Privileged (critic and general observation only).
  Vec3 lin_vel = Vec3::Zero();  // heading frame
  double height = 0.0;
  std::vector<bool> contact;
  Vector air_time;
};

struct EnvState {
  int step = 0;
  double k = 0.0;
  RandomizationRanges ranges;  // scaled by k
  PhysicalParams physical;
  Rng rng;

  Vector q, qd, qdd, torque;
  Vector action, prev_action, prev_prev_action;
  Vector applied_target;  // last target reaching the motors (action delay)
  std::vector<bool> gains_overridden;

  Vec3 position = Vec3::Zero();  // x, y world; z = trunk height
  double roll = 0.0, pitch = 0.0, yaw = 0.0;
  Vec3 lin_vel = Vec3::Zero();  // heading frame
  Vec3 ang_vel = Vec3::Zero();  // roll, pitch, yaw rates

  std::vector<bool> contact;
  Vector air_time;
  std::vector<Vec3> foot_positions;  // heading frame relative to the trunk

  Vec3 command = Vec3::Zero();
  double tracking_error_sum = 0.0;  // sum over steps of |v_xy - c_xy|
  bool fell = false;
  bool done = false;

  double mean_tracking_error() const { return step > 0 ? tracking_error_sum / step : 0.0; }
};

struct StepResult {
  Observation obs;
  TransitionRecord transition;
  RewardBreakdown reward;
  bool done = false;
  bool fell = false;       // includes non-finite states
  bool truncated = false;  // horizon reached
  bool non_finite = false;
};

// Deterministic reduced locomotion model (see README for the full model):
// per-joint second order PD dynamics with implicit damping, a kinematic trunk
// height from the lowest foot, stance feet from a height band above it, trunk
// planar velocity relaxing toward the rigid motion that keeps stance feet
// fixed, and a tilt model that is restoring while the centre of mass projects
// inside the support polygon and an inverted pendulum outside it.
class SurrogateEnv {
 public:
  explicit SurrogateEnv(Embodiment e, EnvConfig cfg = {});

  const Embodiment& embodiment() const { return e_; }
  const EnvConfig& config() const { return cfg_; }
  const EmbodimentDescriptor& descriptor() const { return desc_; }
  int num_joints() const { return J_; }
  int num_feet() const { return static_cast<int>(feet_.size()); }
  const Vector& nominal() const { return nominal_; }
  const Vector& joint_inertia() const { return inertia_; }
  const std::vector<std::pair<int, int>>& foot_pairs() const { return pairs_; }
  double action_scale() const { return ctrl_.action_scale; }
  // Trunk height of the nominal pose standing level on the lowest foot.
  double nominal_trunk_height() const { return nominal_trunk_height_; }

  // Samples the command from the configured ranges and the starting state.
  EnvState reset(double k, Rng rng) const;
  Observation observe(const EnvState& s) const;

  // Applies q_target = q_nominal + sigma * action for one control step.
  StepResult step(EnvState& s, const Vector& action) const;

  // Observation vectors used by the expert actor and critic.
  int expert_obs_dim() const { return 3 * J_ + 9; }
  int critic_obs_dim() const { return expert_obs_dim() + 4 + 2 * num_feet(); }
  Vector expert_observation(const Observation& o) const;
  Vector critic_observation(const Observation& o) const;
  Eigen::Matrix<double, kGeneralObservationDim, 1> general_obs(const Observation& o) const;
  Matrix joint_obs(const Observation& o) const;  // 3 x J

 private:
  struct Kinematics {
    std::vector<Vec3> feet;  // trunk-frame foot sole points
    Vec3 com = Vec3::Zero();
  };
  Kinematics kinematics(const Vector& q) const;
  void place_trunk(EnvState& s, const Kinematics& kin) const;
  double support_margin(const EnvState& s, const Kinematics& kin, Vec3& outward) const;

  Embodiment e_;
  EnvConfig cfg_;
  ClassControlConstants ctrl_;
  EmbodimentDescriptor desc_;
  RewardCoefficients coeffs_;
  int J_ = 0;
  Vector nominal_, lower_, upper_, max_torque_, max_velocity_, inertia_;
  std::vector<std::size_t> feet_;
  std::vector<Vec3> foot_half_extent_;  // footprint half sizes (x, y) and sole depth (z)
  std::vector<std::pair<int, int>> pairs_;
  Vector pair_target_;
  double nominal_trunk_height_ = 0.0;
};

// Trajectory dump: "EMBSTRAJ", u32 version, u32 J, u32 F, u32 pair count,
// u32 record count, then per record little-endian f32 values in the order
// lin_vel(3) ang_vel(3) roll pitch height nominal_height command(3)
// q qd qdd torque lower upper max_velocity nominal action prev_action
// prev_prev_action (J each) contact touchdown air_time foot_force foot_y
// (F each) pair_target_distance (P) self_collision, followed once by the
// foot pairs as u32 (left, right).
void write_trajectory(std::ostream& out, const std::vector<TransitionRecord>& records);
std::vector<TransitionRecord> read_trajectory(std::istream& in);
void save_trajectory(const std::string& path, const std::vector<TransitionRecord>& records);
std::vector<TransitionRecord> load_trajectory(const std::string& path);

}  // namespace embscale

#endif  // EMBSCALE_ENV_HPP_
