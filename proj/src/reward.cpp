#include "embscale/reward.hpp"

#include <cmath>
#include <ostream>

namespace embscale {

namespace {

constexpr std::array<std::string_view, kRewardTerms> kNames = {
    "xy_velocity_tracking", "yaw_velocity_tracking", "z_velocity",        "pitch_roll_velocity",
    "pitch_roll_position",  "joint_nominal",         "joint_position_limits", "joint_velocity_limits",
    "joint_acceleration",   "joint_torque",          "action_rate",       "action_smoothness",
    "walking_height",       "air_time",              "symmetry",          "feet_y_distance",
    "feet_force",           "self_collision"};

double mean_or_zero(double sum, int n) { return n > 0 ? sum / n : 0.0; }

}  // namespace

std::string_view reward_term_name(int term) { return kNames.at(static_cast<std::size_t>(term)); }

RewardCoefficients reward_coefficients(MorphologyClass cls) {
  RewardCoefficients r;
  r.c = {2.0, 1.0, 2.0, 0.05, 5.0, 14.4, 120.0, 10.0, 5e-6, 2.4e-4, 0.12, 0.12, 30.0, 0.1, 0.5, 2.0, 8e-3, 1.0};
  if (cls == MorphologyClass::kHumanoid) {
    r.c[0] = 3.0;
    r.c[1] = 1.5;
    r.c[5] = 43.2;
    r.c[16] = 6e-3;
  }
  return r;
}

void check_transition(const TransitionRecord& tr) {
  const auto J = tr.q.size();
  for (const Vector* v : {&tr.qd, &tr.qdd, &tr.torque, &tr.lower, &tr.upper, &tr.max_velocity, &tr.nominal,
                          &tr.action, &tr.prev_action, &tr.prev_prev_action}) {
    if (v->size() != J) throw ShapeMismatch("transition: per-joint arrays differ in length");
  }
  const auto F = tr.contact.size();
  if (tr.touchdown.size() != F || static_cast<std::size_t>(tr.air_time.size()) != F ||
      static_cast<std::size_t>(tr.foot_force.size()) != F || static_cast<std::size_t>(tr.foot_y.size()) != F) {
    throw ShapeMismatch("transition: per-foot arrays differ in length");
  }
  if (static_cast<std::size_t>(tr.pair_target_distance.size()) != tr.foot_pairs.size()) {
    throw ShapeMismatch("transition: one target distance per foot pair expected");
  }
  for (const auto& [l, r] : tr.foot_pairs) {
    if (l < 0 || r < 0 || static_cast<std::size_t>(l) >= F || static_cast<std::size_t>(r) >= F) {
      throw ShapeMismatch("transition: foot pair index out of range");
    }
  }
}

RewardBreakdown compute_reward(const TransitionRecord& tr, const RewardCoefficients& coeffs, double k) {
  if (!(k >= 0.0 && k <= 1.0)) throw InvalidCurriculum("curriculum coefficient must lie in [0, 1]");
  check_transition(tr);
  const int J = tr.num_joints();
  const int F = tr.num_feet();
  std::array<double, kRewardTerms> t{};

  const double dvx = tr.lin_vel.x() - tr.command.x();
  const double dvy = tr.lin_vel.y() - tr.command.y();
  t[0] = std::exp(-(dvx * dvx + dvy * dvy) / 0.25);
  const double dyaw = tr.ang_vel.z() - tr.command.z();
  t[1] = std::exp(-(dyaw * dyaw) / 0.25);
  t[2] = -tr.lin_vel.z() * tr.lin_vel.z();
  t[3] = -(tr.ang_vel.x() * tr.ang_vel.x() + tr.ang_vel.y() * tr.ang_vel.y());
  t[4] = -(tr.pitch * tr.pitch + tr.roll * tr.roll);

  double nominal = 0, pos_limit = 0, vel_limit = 0, acc = 0, torque = 0, rate = 0, smooth = 0;
  for (int j = 0; j < J; ++j) {
    const double d = tr.q[j] - tr.nominal[j];
    nominal += d * d;
    // Outside the central 90% of the range.
    const double margin = 0.05 * (tr.upper[j] - tr.lower[j]);
    if (tr.q[j] < tr.lower[j] + margin || tr.q[j] > tr.upper[j] - margin) pos_limit += 1.0;
    if (std::abs(tr.qd[j]) > 0.9 * tr.max_velocity[j]) vel_limit += 1.0;
    acc += tr.qdd[j] * tr.qdd[j];
    torque += tr.torque[j] * tr.torque[j];
    const double r = tr.action[j] - tr.prev_action[j];
    rate += r * r;
    const double s = tr.action[j] - 2.0 * tr.prev_action[j] + tr.prev_prev_action[j];
    smooth += s * s;
  }
  t[5] = -mean_or_zero(nominal, J);
  t[6] = -mean_or_zero(pos_limit, J);
  t[7] = -mean_or_zero(vel_limit, J);
  t[8] = -mean_or_zero(acc, J);
  t[9] = -mean_or_zero(torque, J);
  t[10] = -mean_or_zero(rate, J);
  t[11] = -mean_or_zero(smooth, J);

  const double dh = tr.height - tr.nominal_height;
  t[12] = -dh * dh;

  double air = 0, force = 0;
  for (int f = 0; f < F; ++f) {
    if (tr.touchdown[static_cast<std::size_t>(f)]) air += tr.air_time[f] - 0.5;
    force += tr.foot_force[f] * tr.foot_force[f];
  }
  t[13] = -mean_or_zero(air, F);
  const int P = static_cast<int>(tr.foot_pairs.size());
  double both_swing = 0, ydist = 0;
  for (int p = 0; p < P; ++p) {
    const auto [l, r] = tr.foot_pairs[static_cast<std::size_t>(p)];
    const double swing_l = tr.contact[static_cast<std::size_t>(l)] ? 0.0 : 1.0;
    const double swing_r = tr.contact[static_cast<std::size_t>(r)] ? 0.0 : 1.0;
    both_swing += swing_l * swing_r;
    const double e = std::abs(tr.foot_y[l] - tr.foot_y[r]) - tr.pair_target_distance[p];
    ydist += e * e;
  }
  t[14] = -mean_or_zero(both_swing, P);
  t[15] = -mean_or_zero(ydist, P);
  t[16] = -mean_or_zero(force, F);
  t[17] = tr.self_collision ? -1.0 : 0.0;

  RewardBreakdown out;
  out.terms = t;
  out.curriculum = k;
  for (int i = 0; i < kRewardTerms; ++i) {
    const double c = coeffs.c[static_cast<std::size_t>(i)] * (is_penalty(i) ? k : 1.0);
    out.contributions[static_cast<std::size_t>(i)] = c * t[static_cast<std::size_t>(i)];
    out.total += out.contributions[static_cast<std::size_t>(i)];
  }
  return out;
}

Vector pd_target(const Vector& nominal, double sigma, const Vector& action) {
  if (nominal.size() != action.size()) throw ShapeMismatch("pd_target: nominal and action lengths differ");
  return nominal + sigma * action;
}

void write_reward_trace_header(std::ostream& out) {
  out << "step";
  for (int i = 1; i <= kRewardTerms; ++i) out << ",T" << i;
  out << ",total\n";
}

void write_reward_trace_row(std::ostream& out, long step, const RewardBreakdown& r) {
  out << step;
  for (double v : r.terms) out << "," << format_double(v);
  out << "," << format_double(r.total) << "\n";
}

}  // namespace embscale
