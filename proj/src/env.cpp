#include "embscale/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <Eigen/Cholesky>

namespace embscale {

namespace {

using Vec2 = Eigen::Vector2d;

constexpr double kTiltStiffness = 10.0;  // rad/s, restoring natural frequency
constexpr double kPendulumDamping = 0.5;  // 1/s while tipping
constexpr double kFrictionTimeScale = 0.02;  // s, slip relaxation at unit friction
constexpr double kCollisionFraction = 0.25;  // of the nominal pair separation
constexpr double kVelocityObsScale = 0.05;
constexpr double kAngVelObsScale = 0.25;

// Half extent of a primitive along the axes of the frame `r` maps into.
Vec3 half_extent(const Shape& s, const Mat3& r) {
  switch (s.kind) {
    case Shape::Kind::kSphere:
      return Vec3::Constant(s.dims[0]);
    case Shape::Kind::kBox: {
      const Vec3 h(0.5 * s.dims[0], 0.5 * s.dims[1], 0.5 * s.dims[2]);
      return r.cwiseAbs() * h;
    }
    case Shape::Kind::kCylinder: {
      Vec3 out;
      for (int i = 0; i < 3; ++i) {
        const double c = r(i, 2);
        out[i] = std::abs(c) * 0.5 * s.dims[0] + s.dims[1] * std::sqrt(std::max(0.0, 1.0 - c * c));
      }
      return out;
    }
  }
  return Vec3::Zero();
}

double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Andrew's monotone chain; counter-clockwise, no collinear points.
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (pts.size() < 3) return pts;
  std::vector<Vec2> h(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross2(h[k - 2], h[k - 1], p) <= 0) --k;
    h[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    const Vec2& p = pts[i - 1];
    while (k >= t && cross2(h[k - 2], h[k - 1], p) <= 0) --k;
    h[k++] = p;
  }
  h.resize(k - 1);
  return h;
}

Vec2 closest_on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return a;
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return a + t * ab;
}

// Positive inside (distance to the nearest edge), negative outside (minus the
// distance to the polygon); `outward` points from the polygon toward p.
double signed_margin(const std::vector<Vec2>& hull, const Vec2& p, Vec2& outward) {
  outward.setZero();
  if (hull.empty()) return -1.0;
  const std::size_t n = hull.size();
  if (n >= 3) {
    double worst = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& a = hull[i];
      const Vec2& b = hull[(i + 1) % n];
      const Vec2 d = b - a;
      const Vec2 normal = Vec2(d.y(), -d.x()).normalized();
      worst = std::max(worst, normal.dot(p - a));
    }
    if (worst <= 0.0) return -worst;
  }
  double best = 1e300;
  Vec2 best_pt = hull[0];
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 c = closest_on_segment(p, hull[i], hull[(i + 1) % n]);
    const double dist = (p - c).norm();
    if (dist < best) {
      best = dist;
      best_pt = c;
    }
  }
  if (best > 0.0) outward = (p - best_pt) / best;
  return -best;
}

Mat3 tilt_rotation(double roll, double pitch) { return rpy_to_matrix(Vec3(roll, pitch, 0.0)); }

bool all_finite(const EnvState& s) {
  return s.q.allFinite() && s.qd.allFinite() && s.position.allFinite() && s.lin_vel.allFinite() &&
         s.ang_vel.allFinite() && std::isfinite(s.roll) && std::isfinite(s.pitch) && std::isfinite(s.yaw);
}

}  // namespace

JointLimitOutput joint_limit_layer(double target, double measured, double lo, double hi, double kp, double kd) {
  JointLimitOutput out;
  out.target = std::clamp(target, lo, hi);
  if (measured < lo || measured > hi) {
    out.kp = kLimitLayerKp;
    out.kd = kLimitLayerKd;
    out.overridden = true;
  } else {
    out.kp = kp;
    out.kd = kd;
  }
  return out;
}

SurrogateEnv::SurrogateEnv(Embodiment e, EnvConfig cfg) : e_(std::move(e)), cfg_(std::move(cfg)) {
  require_valid(e_);
  check_ranges(cfg_.ranges);
  if (cfg_.substeps < 1 || cfg_.horizon < 1 || !(cfg_.control_dt > 0.0)) {
    throw Error("environment config: substeps, horizon and control_dt must be positive");
  }
  ctrl_ = control_constants(e_.cls);
  desc_ = descriptor_of(e_, ctrl_);
  coeffs_ = reward_coefficients(e_.cls);
  const auto act = e_.actuated_joints();
  J_ = static_cast<int>(act.size());
  nominal_.resize(J_);
  lower_.resize(J_);
  upper_.resize(J_);
  max_torque_.resize(J_);
  max_velocity_.resize(J_);
  for (int j = 0; j < J_; ++j) {
    const JointSpec& js = e_.joints[act[static_cast<std::size_t>(j)]];
    nominal_[j] = js.nominal_angle;
    lower_[j] = js.lower;
    upper_[j] = js.upper;
    max_torque_[j] = js.max_torque;
    max_velocity_[j] = js.max_velocity;
  }
  if (!cfg_.restricted_bounds.empty()) {
    if (static_cast<int>(cfg_.restricted_bounds.size()) != J_) {
      throw ShapeMismatch("restricted bounds: one entry per actuated joint expected");
    }
    for (int j = 0; j < J_; ++j) {
      const auto& b = cfg_.restricted_bounds[static_cast<std::size_t>(j)];
      if (b && (b->lo < lower_[j] || b->hi > upper_[j] || b->lo > b->hi)) {
        throw Error("restricted bounds must lie within the hard joint limits");
      }
    }
  }

  // Effective joint inertia at the nominal pose: every link below the joint
  // contributes m d^2 about the joint axis plus a uniform-rod term.
  const std::vector<double> qn(nominal_.data(), nominal_.data() + J_);
  const KinematicState ks = forward_kinematics(e_, qn);
  std::map<std::string, std::size_t> link_index;
  for (std::size_t i = 0; i < e_.links.size(); ++i) link_index[e_.links[i].name] = i;
  std::multimap<std::string, std::size_t> children;  // parent link -> joint
  for (std::size_t i = 0; i < e_.joints.size(); ++i) children.emplace(e_.joints[i].parent_link, i);
  inertia_.resize(J_);
  for (int j = 0; j < J_; ++j) {
    const std::size_t ji = act[static_cast<std::size_t>(j)];
    const Vec3 p = ks.joint_positions[ji];
    const Vec3 a = ks.joint_axes[ji].normalized();
    double inertia = 0.0;
    std::vector<std::string> stack = {e_.joints[ji].child_link};
    while (!stack.empty()) {
      const std::string name = stack.back();
      stack.pop_back();
      const std::size_t li = link_index.at(name);
      const LinkSpec& l = e_.links[li];
      const Pose& pose = ks.link_poses[li];
      const Vec3 c = pose.position + pose.rotation * l.origin_xyz - p;
      const Vec3 radial = c - c.dot(a) * a;
      const Vec3 ext = half_extent(l.shape, pose.rotation * rpy_to_matrix(l.origin_rpy));
      inertia += l.mass * (radial.squaredNorm() + ext.squaredNorm() / 3.0);
      auto [lo, hi] = children.equal_range(name);
      for (auto it = lo; it != hi; ++it) stack.push_back(e_.joints[it->second].child_link);
    }
    inertia_[j] = std::max(inertia, cfg_.min_joint_inertia);
  }

  feet_ = foot_links(e_);
  if (feet_.empty()) throw InvalidEmbodiment("embodiment has no feet");
  for (std::size_t f : feet_) {
    const LinkSpec& l = e_.links[f];
    const Pose& pose = ks.link_poses[f];
    foot_half_extent_.push_back(half_extent(l.shape, pose.rotation * rpy_to_matrix(l.origin_rpy)));
  }

  // Left/right pairs, matched front to back.
  std::vector<int> left, right;
  for (int f = 0; f < num_feet(); ++f) {
    (is_left_side(e_.links[feet_[static_cast<std::size_t>(f)]].name) ? left : right).push_back(f);
  }
  const Kinematics kin = kinematics(nominal_);
  if (left.size() == right.size()) {
    auto by_x = [&](int a, int b) {
      return kin.feet[static_cast<std::size_t>(a)].x() > kin.feet[static_cast<std::size_t>(b)].x();
    };
    std::sort(left.begin(), left.end(), by_x);
    std::sort(right.begin(), right.end(), by_x);
    for (std::size_t i = 0; i < left.size(); ++i) pairs_.emplace_back(left[i], right[i]);
  }
  pair_target_.resize(static_cast<Eigen::Index>(pairs_.size()));
  for (std::size_t p = 0; p < pairs_.size(); ++p) {
    pair_target_[static_cast<Eigen::Index>(p)] =
        std::abs(kin.feet[static_cast<std::size_t>(pairs_[p].first)].y() -
                 kin.feet[static_cast<std::size_t>(pairs_[p].second)].y());
  }
  double lowest = 0.0;
  for (const Vec3& f : kin.feet) lowest = std::max(lowest, -f.z());
  nominal_trunk_height_ = lowest;
}

SurrogateEnv::Kinematics SurrogateEnv::kinematics(const Vector& q) const {
  const KinematicState ks = forward_kinematics(e_, std::span<const double>(q.data(), static_cast<std::size_t>(q.size())));
  Kinematics out;
  out.feet.reserve(feet_.size());
  for (std::size_t i = 0; i < feet_.size(); ++i) {
    const LinkSpec& l = e_.links[feet_[i]];
    const Pose& pose = ks.link_poses[feet_[i]];
    const Vec3 centre = pose.position + pose.rotation * l.origin_xyz;
    const Vec3 ext = half_extent(l.shape, pose.rotation * rpy_to_matrix(l.origin_rpy));
    out.feet.push_back(centre - Vec3(0.0, 0.0, ext.z()));
  }
  out.com = center_of_mass(e_, ks);
  return out;
}

void SurrogateEnv::place_trunk(EnvState& s, const Kinematics& kin) const {
  const Mat3 r = tilt_rotation(s.roll, s.pitch);
  const int F = num_feet();
  s.foot_positions.resize(static_cast<std::size_t>(F));
  double h = -1e300;
  for (int f = 0; f < F; ++f) {
    s.foot_positions[static_cast<std::size_t>(f)] = r * kin.feet[static_cast<std::size_t>(f)];
    h = std::max(h, -s.foot_positions[static_cast<std::size_t>(f)].z());
  }
  s.position.z() = h;
  s.contact.resize(static_cast<std::size_t>(F));
  for (int f = 0; f < F; ++f) {
    s.contact[static_cast<std::size_t>(f)] = h + s.foot_positions[static_cast<std::size_t>(f)].z() <= cfg_.contact_threshold;
  }
}

double SurrogateEnv::support_margin(const EnvState& s, const Kinematics& kin, Vec3& outward) const {
  const Mat3 r = tilt_rotation(s.roll, s.pitch);
  std::vector<Vec2> pts;
  for (int f = 0; f < num_feet(); ++f) {
    if (!s.contact[static_cast<std::size_t>(f)]) continue;
    const Vec3 c = r * kin.feet[static_cast<std::size_t>(f)];
    const Vec3& e = foot_half_extent_[static_cast<std::size_t>(f)];
    for (double sx : {-1.0, 1.0}) {
      for (double sy : {-1.0, 1.0}) pts.emplace_back(c.x() + sx * e.x(), c.y() + sy * e.y());
    }
  }
  const double m = e_.total_mass;
  const double added = s.physical.added_mass;
  const Vec3 com = r * (kin.com * (m / std::max(m + added, 1e-6)));
  Vec2 dir;
  const double margin = signed_margin(convex_hull(pts), Vec2(com.x(), com.y()), dir);
  outward = Vec3(dir.x(), dir.y(), com.z());
  return margin;
}

EnvState SurrogateEnv::reset(double k, Rng rng) const {
  if (!(k >= 0.0 && k <= 1.0)) throw InvalidCurriculum("curriculum coefficient must lie in [0, 1]");
  EnvState s;
  s.k = k;
  s.ranges = scaled_ranges(cfg_.ranges, cfg_.randomize ? k : 0.0);
  s.rng = rng;
  s.command = Vec3(s.rng.uniform(cfg_.command_x.lo, cfg_.command_x.hi), s.rng.uniform(cfg_.command_y.lo, cfg_.command_y.hi),
                   s.rng.uniform(cfg_.command_yaw.lo, cfg_.command_yaw.hi));
  const RandomizationDraw d = sample_randomization(s.ranges, s.rng, RandomizationPhase::kEpisodeStart, J_);
  s.physical = d.physical;
  const Vector half_range = 0.5 * (upper_ - lower_);
  s.q = (nominal_ + d.start_joint_position_factor.cwiseProduct(half_range)).cwiseMax(lower_).cwiseMin(upper_);
  s.qd = d.start_joint_velocity_factor.cwiseProduct(half_range).cwiseMax(-max_velocity_).cwiseMin(max_velocity_);
  s.qdd = Vector::Zero(J_);
  s.torque = Vector::Zero(J_);
  s.action = Vector::Zero(J_);
  s.prev_action = Vector::Zero(J_);
  s.prev_prev_action = Vector::Zero(J_);
  s.applied_target = s.q;
  s.gains_overridden.assign(static_cast<std::size_t>(J_), false);
  s.roll = d.start_orientation.x();
  s.pitch = d.start_orientation.y();
  s.yaw = d.start_orientation.z();
  s.lin_vel = Vec3(d.start_lin_vel.x(), d.start_lin_vel.y(), 0.0);
  s.ang_vel = d.start_ang_vel;
  place_trunk(s, kinematics(s.q));
  s.air_time = Vector::Zero(num_feet());
  return s;
}

Observation SurrogateEnv::observe(const EnvState& s) const {
  Observation o;
  o.q = s.q + s.physical.joint_position_offset;
  o.qd = s.qd;
  o.prev_action = s.action;
  o.ang_vel = s.ang_vel;
  o.gravity = tilt_rotation(s.roll, s.pitch).transpose() * Vec3(0.0, 0.0, -1.0);
  o.command = s.command;
  o.lin_vel = s.lin_vel;
  o.height = s.position.z();
  o.contact = s.contact;
  o.air_time = s.air_time;
  return o;
}

StepResult SurrogateEnv::step(EnvState& s, const Vector& action) const {
  if (action.size() != J_) throw ShapeMismatch("step: action length differs from the joint count");
  if (s.done) throw Error("step: episode already finished; call reset");
  const double dt = cfg_.control_dt;
  const double h = dt / cfg_.substeps;

  RandomizationDraw draw;
  if (cfg_.randomize) {
    draw = sample_randomization(s.ranges, s.rng, RandomizationPhase::kPerStep, J_);
    apply_physical(s.physical, draw);
    if (draw.push) {
      s.lin_vel.x() += draw.push->x();
      s.lin_vel.y() += draw.push->y();
    }
  }
  const PhysicalParams& phys = s.physical;

  s.prev_prev_action = s.prev_action;
  s.prev_action = s.action;
  s.action = action;
  const Vector target = pd_target(nominal_, ctrl_.action_scale, action);
  const Vector commanded = (draw.action_delayed && s.step > 0) ? s.applied_target : target;
  s.applied_target = target;

  // Joint dynamics.
  const Vector qd_start = s.qd;
  const double damping = cfg_.base_joint_damping + phys.joint_friction;
  for (int j = 0; j < J_; ++j) {
    const double measured = s.q[j] + phys.joint_position_offset[j];
    double tgt = commanded[j];
    double kp = ctrl_.kp * phys.p_gain_factor;
    double kd = ctrl_.kd * phys.d_gain_factor;
    bool overridden = false;
    if (!cfg_.restricted_bounds.empty() && cfg_.restricted_bounds[static_cast<std::size_t>(j)]) {
      const Range& b = *cfg_.restricted_bounds[static_cast<std::size_t>(j)];
      const JointLimitOutput lim = joint_limit_layer(tgt, measured, b.lo, b.hi, kp, kd);
      tgt = lim.target;
      kp = lim.kp;
      kd = lim.kd;
      overridden = lim.overridden;
    }
    s.gains_overridden[static_cast<std::size_t>(j)] = overridden;
    const double inertia = inertia_[j] + phys.joint_armature;
    const double ms = phys.motor_strength;
    double q = s.q[j], qd = s.qd[j], tau = 0.0;
    for (int sub = 0; sub < cfg_.substeps; ++sub) {
      const double err = tgt - (q + phys.joint_position_offset[j]);
      // Implicit in the PD and damping terms so stiff gains stay stable.
      double qd_next = (inertia * qd + h * ms * kp * err) / (inertia + h * ms * kd + h * h * ms * kp + h * damping);
      tau = ms * (kp * (err - h * qd_next) - kd * qd_next);
      if (std::abs(tau) > max_torque_[j]) {
        tau = std::copysign(max_torque_[j], tau);
        qd_next = (inertia * qd + h * tau) / (inertia + h * damping);
      }
      qd = std::clamp(qd_next, -max_velocity_[j], max_velocity_[j]);
      q += h * qd;
      if (q < lower_[j]) {
        q = lower_[j];
        qd = std::max(qd, 0.0);
      } else if (q > upper_[j]) {
        q = upper_[j];
        qd = std::min(qd, 0.0);
      }
    }
    s.q[j] = q;
    s.qd[j] = qd;
    s.torque[j] = tau;
  }
  s.qdd = (s.qd - qd_start) / dt;

  // Trunk.
  const Kinematics kin = kinematics(s.q);
  const std::vector<Vec3> feet_before = s.foot_positions;
  const std::vector<bool> contact_before = s.contact;
  const double height_before = s.position.z();
  place_trunk(s, kin);

  // Rigid planar trunk motion that keeps stance feet in place.
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Vec3 atb = Vec3::Zero();
  int stance = 0;
  for (int f = 0; f < num_feet(); ++f) {
    if (!s.contact[static_cast<std::size_t>(f)]) continue;
    ++stance;
    const Vec3& p = s.foot_positions[static_cast<std::size_t>(f)];
    const Vec3 u = (p - feet_before[static_cast<std::size_t>(f)]) / dt;
    Eigen::Matrix<double, 2, 3> a;
    a << 1.0, 0.0, -p.y(), 0.0, 1.0, p.x();
    ata += a.transpose() * a;
    atb += a.transpose() * Eigen::Vector2d(-u.x(), -u.y());
  }
  Vec3 planar_target(s.lin_vel.x(), s.lin_vel.y(), s.ang_vel.z());
  if (stance > 0) {
    ata(2, 2) += 1e-6;
    planar_target = ata.ldlt().solve(atb);
  }
  const double alpha = 1.0 - std::exp(-dt * std::max(phys.static_friction, 0.0) / kFrictionTimeScale);
  s.lin_vel.x() += alpha * (planar_target.x() - s.lin_vel.x());
  s.lin_vel.y() += alpha * (planar_target.y() - s.lin_vel.y());
  s.ang_vel.z() += alpha * (planar_target.z() - s.ang_vel.z());

  // Tilt: restoring inside the support polygon, inverted pendulum outside.
  for (int sub = 0; sub < cfg_.substeps; ++sub) {
    Vec3 outward;
    const double margin = support_margin(s, kin, outward);
    double roll_acc, pitch_acc;
    if (margin >= 0.0) {
      roll_acc = -kTiltStiffness * kTiltStiffness * s.roll - 2.0 * kTiltStiffness * s.ang_vel.x();
      pitch_acc = -kTiltStiffness * kTiltStiffness * s.pitch - 2.0 * kTiltStiffness * s.ang_vel.y();
    } else {
      const double com_height = std::max(s.position.z() + outward.z(), 0.05);
      const double a = phys.gravity * (-margin) / (com_height * com_height);
      roll_acc = -a * outward.y() - kPendulumDamping * s.ang_vel.x();
      pitch_acc = a * outward.x() - kPendulumDamping * s.ang_vel.y();
    }
    s.ang_vel.x() += h * roll_acc;
    s.ang_vel.y() += h * pitch_acc;
    s.roll += h * s.ang_vel.x();
    s.pitch += h * s.ang_vel.y();
  }
  place_trunk(s, kin);
  s.lin_vel.z() = (s.position.z() - height_before) / dt;
  s.yaw += dt * s.ang_vel.z();
  const double cy = std::cos(s.yaw), sy = std::sin(s.yaw);
  s.position.x() += dt * (cy * s.lin_vel.x() - sy * s.lin_vel.y());
  s.position.y() += dt * (sy * s.lin_vel.x() + cy * s.lin_vel.y());

  // Feet.
  const int F = num_feet();
  StepResult out;
  TransitionRecord& tr = out.transition;
  tr.touchdown.assign(static_cast<std::size_t>(F), false);
  tr.air_time = Vector::Zero(F);
  tr.foot_force = Vector::Zero(F);
  tr.foot_y.resize(F);
  int in_contact = 0;
  for (int f = 0; f < F; ++f) in_contact += s.contact[static_cast<std::size_t>(f)] ? 1 : 0;
  const double weight = std::max(e_.total_mass + phys.added_mass, 0.0) * phys.gravity;
  for (int f = 0; f < F; ++f) {
    const auto fi = static_cast<std::size_t>(f);
    if (s.contact[fi]) {
      if (!contact_before[fi]) {
        tr.touchdown[fi] = true;
        tr.air_time[f] = s.air_time[f] + dt;
      }
      s.air_time[f] = 0.0;
      tr.foot_force[f] = weight / in_contact;
    } else {
      s.air_time[f] += dt;
    }
    tr.foot_y[f] = s.foot_positions[fi].y();
  }
  tr.foot_pairs = pairs_;
  tr.pair_target_distance = pair_target_;
  for (std::size_t p = 0; p < pairs_.size(); ++p) {
    const double sep = std::abs(tr.foot_y[pairs_[p].first] - tr.foot_y[pairs_[p].second]);
    if (sep < kCollisionFraction * pair_target_[static_cast<Eigen::Index>(p)]) tr.self_collision = true;
  }

  tr.lin_vel = s.lin_vel;
  tr.ang_vel = s.ang_vel;
  tr.roll = s.roll;
  tr.pitch = s.pitch;
  tr.height = s.position.z();
  tr.nominal_height = nominal_trunk_height_;
  tr.command = s.command;
  tr.q = s.q;
  tr.qd = s.qd;
  tr.qdd = s.qdd;
  tr.torque = s.torque;
  tr.lower = lower_;
  tr.upper = upper_;
  tr.max_velocity = max_velocity_;
  tr.nominal = nominal_;
  tr.action = s.action;
  tr.prev_action = s.prev_action;
  tr.prev_prev_action = s.prev_prev_action;
  tr.contact = s.contact;

  ++s.step;
  out.non_finite = !all_finite(s);
  if (out.non_finite) {
    out.fell = true;
  } else {
    out.reward = compute_reward(tr, coeffs_, s.k);
    const Vec3 dv = s.lin_vel - s.command;
    s.tracking_error_sum += std::hypot(dv.x(), dv.y());
    out.fell = std::abs(s.roll) > cfg_.fall_angle || std::abs(s.pitch) > cfg_.fall_angle ||
               s.position.z() < cfg_.fall_height_fraction * nominal_trunk_height_;
  }
  out.truncated = !out.fell && s.step >= cfg_.horizon;
  out.done = out.fell || out.truncated;
  s.fell = out.fell;
  s.done = out.done;

  out.obs = observe(s);
  if (cfg_.randomize) {
    out.obs.q += draw.joint_position_noise;
    out.obs.qd += draw.joint_velocity_noise;
    out.obs.ang_vel += draw.ang_vel_noise;
    out.obs.gravity += draw.gravity_noise;
    for (int j = 0; j < J_; ++j) {
      if (draw.dropout[static_cast<std::size_t>(j)]) {
        out.obs.q[j] = 0.0;
        out.obs.qd[j] = 0.0;
        out.obs.prev_action[j] = 0.0;
      }
    }
  }
  return out;
}

Vector SurrogateEnv::expert_observation(const Observation& o) const {
  Vector v(expert_obs_dim());
  v << o.q - nominal_, kVelocityObsScale * o.qd, o.prev_action, kAngVelObsScale * o.ang_vel, o.gravity, o.command;
  return v;
}

Vector SurrogateEnv::critic_observation(const Observation& o) const {
  const int F = num_feet();
  Vector v(critic_obs_dim());
  v.head(expert_obs_dim()) = expert_observation(o);
  int i = expert_obs_dim();
  v.segment<3>(i) = o.lin_vel;
  i += 3;
  v[i++] = o.height - nominal_trunk_height_;
  for (int f = 0; f < F; ++f) v[i++] = o.contact[static_cast<std::size_t>(f)] ? 1.0 : 0.0;
  for (int f = 0; f < F; ++f) v[i++] = o.air_time[f];
  return v;
}

Eigen::Matrix<double, kGeneralObservationDim, 1> SurrogateEnv::general_obs(const Observation& o) const {
  return general_observation(o.lin_vel, o.gravity, o.command, desc_.general);
}

Matrix SurrogateEnv::joint_obs(const Observation& o) const {
  Matrix m(kJointObservationDim, J_);
  m.row(0) = (o.q - nominal_).transpose();
  m.row(1) = kVelocityObsScale * o.qd.transpose();
  m.row(2) = o.prev_action.transpose();
  return m;
}

// --- trajectory dump ----------------------------------------------------------

namespace {

constexpr char kTrajMagic[] = "EMBSTRAJ";
constexpr std::uint32_t kTrajVersion = 1;

void put_bools(BinaryWriter& w, const std::vector<bool>& b) {
  for (bool x : b) w.f32(x ? 1.0f : 0.0f);
}

void get_bools(BinaryReader& r, std::vector<bool>& b, int n) {
  b.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) b[static_cast<std::size_t>(i)] = r.f32() != 0.0f;
}

void get_vec(BinaryReader& r, Vector& v, int n) {
  v.resize(n);
  r.f32_array(as_span(v));
}

void get_vec3(BinaryReader& r, Vec3& v) {
  for (int i = 0; i < 3; ++i) v[i] = r.f32();
}

}  // namespace

void write_trajectory(std::ostream& out, const std::vector<TransitionRecord>& records) {
  BinaryWriter w(out);
  w.bytes(std::string_view(kTrajMagic, 8));
  w.u32(kTrajVersion);
  const int J = records.empty() ? 0 : records.front().num_joints();
  const int F = records.empty() ? 0 : records.front().num_feet();
  const auto P = records.empty() ? std::size_t{0} : records.front().foot_pairs.size();
  w.u32(static_cast<std::uint32_t>(J));
  w.u32(static_cast<std::uint32_t>(F));
  w.u32(static_cast<std::uint32_t>(P));
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& tr : records) {
    check_transition(tr);
    if (tr.num_joints() != J || tr.num_feet() != F || tr.foot_pairs.size() != P) {
      throw ShapeMismatch("trajectory: records of one dump must share dimensions");
    }
    for (const Vec3* v : {&tr.lin_vel, &tr.ang_vel}) w.f32_array(std::span<const double>(v->data(), 3));
    w.f32(static_cast<float>(tr.roll));
    w.f32(static_cast<float>(tr.pitch));
    w.f32(static_cast<float>(tr.height));
    w.f32(static_cast<float>(tr.nominal_height));
    w.f32_array(std::span<const double>(tr.command.data(), 3));
    for (const Vector* v : {&tr.q, &tr.qd, &tr.qdd, &tr.torque, &tr.lower, &tr.upper, &tr.max_velocity, &tr.nominal,
                            &tr.action, &tr.prev_action, &tr.prev_prev_action}) {
      w.f32_array(as_span(*v));
    }
    put_bools(w, tr.contact);
    put_bools(w, tr.touchdown);
    for (const Vector* v : {&tr.air_time, &tr.foot_force, &tr.foot_y, &tr.pair_target_distance}) w.f32_array(as_span(*v));
    w.f32(tr.self_collision ? 1.0f : 0.0f);
  }
  if (!records.empty()) {
    for (const auto& [l, r] : records.front().foot_pairs) {
      w.u32(static_cast<std::uint32_t>(l));
      w.u32(static_cast<std::uint32_t>(r));
    }
  }
}

std::vector<TransitionRecord> read_trajectory(std::istream& in) {
  BinaryReader r(in);
  if (r.bytes(8) != std::string_view(kTrajMagic, 8)) throw ParseError("trajectory: bad magic");
  if (r.u32() != kTrajVersion) throw ParseError("trajectory: unsupported version");
  const int J = static_cast<int>(r.u32());
  const int F = static_cast<int>(r.u32());
  const int P = static_cast<int>(r.u32());
  const std::uint32_t n = r.u32();
  std::vector<TransitionRecord> out(n);
  for (auto& tr : out) {
    get_vec3(r, tr.lin_vel);
    get_vec3(r, tr.ang_vel);
    tr.roll = r.f32();
    tr.pitch = r.f32();
    tr.height = r.f32();
    tr.nominal_height = r.f32();
    get_vec3(r, tr.command);
    for (Vector* v : {&tr.q, &tr.qd, &tr.qdd, &tr.torque, &tr.lower, &tr.upper, &tr.max_velocity, &tr.nominal,
                      &tr.action, &tr.prev_action, &tr.prev_prev_action}) {
      get_vec(r, *v, J);
    }
    get_bools(r, tr.contact, F);
    get_bools(r, tr.touchdown, F);
    get_vec(r, tr.air_time, F);
    get_vec(r, tr.foot_force, F);
    get_vec(r, tr.foot_y, F);
    get_vec(r, tr.pair_target_distance, P);
    tr.self_collision = r.f32() != 0.0f;
  }
  std::vector<std::pair<int, int>> pairs(static_cast<std::size_t>(n > 0 ? P : 0));
  for (auto& [a, b] : pairs) {
    a = static_cast<int>(r.u32());
    b = static_cast<int>(r.u32());
  }
  for (auto& tr : out) tr.foot_pairs = pairs;
  return out;
}

void save_trajectory(const std::string& path, const std::vector<TransitionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_trajectory(out, records);
  if (!out) throw IoError("write failed: " + path);
}

std::vector<TransitionRecord> load_trajectory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_trajectory(in);
}

}  // namespace embscale
