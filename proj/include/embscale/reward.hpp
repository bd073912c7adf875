#ifndef EMBSCALE_REWARD_HPP_
#define EMBSCALE_REWARD_HPP_

#include <array>
#include <iosfwd>
#include <string_view>
#include <utility>
#include <vector>

#include "embscale/embodiment.hpp"
#include "embscale/nn.hpp"

namespace embscale {

inline constexpr int kRewardTerms = 18;

// Everything the reward terms read from one control step. Per-joint arrays
// follow actuated order; per-foot arrays follow foot_links() order.
struct TransitionRecord {
  Vec3 lin_vel = Vec3::Zero();  // trunk, heading frame
  Vec3 ang_vel = Vec3::Zero();  // (roll rate, pitch rate, yaw rate)
  double roll = 0.0;
  double pitch = 0.0;
  double height = 0.0;
  double nominal_height = 0.0;
  Vec3 command = Vec3::Zero();  // (c_x, c_y, c_yaw)

  Vector q, qd, qdd, torque;
  Vector lower, upper, max_velocity, nominal;
  Vector action, prev_action, prev_prev_action;

  std::vector<bool> contact;
  std::vector<bool> touchdown;  // contact began this step
  Vector air_time;              // swing duration ending at this step's touchdown, s
  Vector foot_force;            // contact force magnitude, N
  Vector foot_y;                // lateral foot position, heading frame
  std::vector<std::pair<int, int>> foot_pairs;  // (left, right) indices into the foot arrays
  Vector pair_target_distance;                  // per pair, nominal lateral separation
  bool self_collision = false;

  int num_joints() const { return static_cast<int>(q.size()); }
  int num_feet() const { return static_cast<int>(contact.size()); }
};

// Consistency of array sizes; throws ShapeMismatch.
void check_transition(const TransitionRecord& tr);

struct RewardCoefficients {
  std::array<double, kRewardTerms> c{};
};

// Default coefficients with the humanoid overrides for T1, T2, T6 and T17.
RewardCoefficients reward_coefficients(MorphologyClass cls);

// T1 and T2 are tracking rewards; every other term is a curriculum-scaled
// penalty.
constexpr bool is_penalty(int term) { return term >= 2; }

std::string_view reward_term_name(int term);

struct RewardBreakdown {
  std::array<double, kRewardTerms> terms{};          // raw term values (penalties <= 0 except T14)
  std::array<double, kRewardTerms> contributions{};  // coefficient (x k for penalties) x term
  double total = 0.0;
  double curriculum = 0.0;
};

// Throws InvalidCurriculum when k is outside [0, 1].
RewardBreakdown compute_reward(const TransitionRecord& tr, const RewardCoefficients& coeffs, double k);

// q_target = q_nominal + sigma * a. Throws ShapeMismatch on length mismatch.
Vector pd_target(const Vector& nominal, double sigma, const Vector& action);

// Reward trace CSV: step, T1..T18, total.
void write_reward_trace_header(std::ostream& out);
void write_reward_trace_row(std::ostream& out, long step, const RewardBreakdown& r);

}  // namespace embscale

#endif  // EMBSCALE_REWARD_HPP_
