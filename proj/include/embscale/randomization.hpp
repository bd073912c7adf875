#ifndef EMBSCALE_RANDOMIZATION_HPP_
#define EMBSCALE_RANDOMIZATION_HPP_

#include <array>
#include <iosfwd>
#include <optional>
#include <string>

#include "embscale/common.hpp"
#include "embscale/nn.hpp"

namespace embscale {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double mid() const { return 0.5 * (lo + hi); }
  bool operator==(const Range&) const = default;
};

// Final (curriculum 1) randomization values. Ranges are sampled uniformly,
// scalar noise values are symmetric half-widths, chances are probabilities.
struct RandomizationRanges {
  int max_action_delay = 1;  // steps
  double action_delay_chance = 0.05;
  Range motor_strength{0.5, 1.5};
  Range p_gain_factor{0.5, 1.5};
  Range d_gain_factor{0.5, 1.5};
  Range joint_position_offset{-0.05, 0.05};
  Range starting_orientation_factor{-0.0625, 0.0625};
  Range starting_joint_position_factor{-0.5, 0.5};
  Range starting_joint_velocity_factor{-0.5, 0.5};
  Range starting_linear_velocity{-0.5, 0.5};
  Range starting_angular_velocity{-0.5, 0.5};
  double joint_position_noise = 0.01;
  double joint_velocity_noise = 1.5;
  double angular_velocity_noise = 0.2;
  double gravity_noise = 0.05;
  double joint_observation_dropout = 0.05;
  Range static_friction{0.05, 2.0};
  Range dynamic_friction{0.05, 1.5};
  Range restitution{0.0, 1.0};
  Range added_mass{-2.0, 2.0};
  Range gravity{-8.81, 10.81};
  Range joint_friction{0.0, 0.01};
  Range joint_armature{0.0, 0.01};
  Range push_x{-1.0, 1.0};
  Range push_y{-1.0, 1.0};
  Range push_z{-1.0, 1.0};
  // Per-step resampling probability of physical parameters and pushes. Not
  // scaled by the curriculum.
  double resample_probability = 0.002;

  bool operator==(const RandomizationRanges&) const = default;
};

// Throws InvalidCurriculum on lo > hi or probabilities outside [0, 1].
void check_ranges(const RandomizationRanges& r);

// Ranges shrink linearly about their midpoint, scalar magnitudes and chances
// scale by k. k = 1 returns `base`.
RandomizationRanges scaled_ranges(const RandomizationRanges& base, double k);

// Configuration file: one "<table row name>: <value>" line per row, values
// "(lo, hi)" or a scalar; '#' starts a comment. Missing rows keep defaults.
void write_ranges(std::ostream& out, const RandomizationRanges& r);
RandomizationRanges read_ranges(std::istream& in);
RandomizationRanges load_ranges(const std::string& path);

// --- curriculum ---------------------------------------------------------------

// The coefficient is held as an integer number of 0.01 steps so repeated
// updates land exactly on multiples of 0.01.
class CurriculumState {
 public:
  explicit CurriculumState(double k = 0.0);
  double k() const { return level_ / 100.0; }
  int level() const { return level_; }
  int successes() const { return successes_; }
  int failures() const { return failures_; }
  int streak() const { return streak_; }

  static constexpr double kErrorThreshold = 0.4;  // m/s

  // +0.01 if the episode ended without a fall and the mean xy tracking error
  // is below the threshold, -0.01 otherwise; clamped to [0, 1].
  void update(bool fell, double mean_xy_tracking_error);

 private:
  int level_ = 0;
  int successes_ = 0;
  int failures_ = 0;
  int streak_ = 0;
};

CurriculumState update_curriculum(CurriculumState s, bool fell, double mean_xy_tracking_error);

// --- sampling -----------------------------------------------------------------

enum class PhysicalParam {
  kMotorStrength,
  kPGainFactor,
  kDGainFactor,
  kJointPositionOffset,
  kStaticFriction,
  kDynamicFriction,
  kRestitution,
  kAddedMass,
  kGravity,
  kJointFriction,
  kJointArmature,
  kPush,
  kCount
};
inline constexpr int kPhysicalParamCount = static_cast<int>(PhysicalParam::kCount);

struct PhysicalParams {
  double motor_strength = 1.0;
  double p_gain_factor = 1.0;
  double d_gain_factor = 1.0;
  Vector joint_position_offset;  // rad, per joint
  double static_friction = 1.025;
  double dynamic_friction = 0.775;
  double restitution = 0.5;
  double added_mass = 0.0;  // kg on the trunk
  double gravity = 9.81;    // magnitude; the table row is an offset about its midpoint
  double joint_friction = 0.005;
  double joint_armature = 0.005;
};

enum class RandomizationPhase { kEpisodeStart, kPerStep };

struct RandomizationDraw {
  RandomizationPhase phase = RandomizationPhase::kEpisodeStart;

  // Episode start.
  Vec3 start_orientation = Vec3::Zero();  // roll, pitch, yaw offsets, rad
  Vector start_joint_position_factor;     // x half the joint range
  Vector start_joint_velocity_factor;     // x half the joint range, per second
  Vec3 start_lin_vel = Vec3::Zero();
  Vec3 start_ang_vel = Vec3::Zero();

  // Per step.
  Vector joint_position_noise;
  Vector joint_velocity_noise;
  Vec3 ang_vel_noise = Vec3::Zero();
  Vec3 gravity_noise = Vec3::Zero();
  std::vector<bool> dropout;  // per joint: observation zeroed
  bool action_delayed = false;

  // Physical parameters: all resampled at episode start, each independently
  // with resample_probability per step.
  std::array<bool, kPhysicalParamCount> resampled{};
  PhysicalParams physical;
  std::optional<Vec3> push;  // trunk velocity impulse
};

// `ranges` are the curriculum-scaled ranges. With phase kPerStep, only the
// fields flagged in `resampled` carry new physical values.
RandomizationDraw sample_randomization(const RandomizationRanges& ranges, Rng& rng,
                                       RandomizationPhase phase, int num_joints);

// Copies the resampled fields of a draw into `current`.
void apply_physical(PhysicalParams& current, const RandomizationDraw& draw);

// Midpoint physical parameters for `num_joints` joints.
PhysicalParams nominal_physical(const RandomizationRanges& ranges, int num_joints);

}  // namespace embscale

#endif  // EMBSCALE_RANDOMIZATION_HPP_
