#include "embscale/randomization.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <variant>

namespace embscale {

namespace {

using RangeField = Range RandomizationRanges::*;
using ScalarField = double RandomizationRanges::*;
using IntField = int RandomizationRanges::*;

struct Row {
  const char* name;
  std::variant<RangeField, ScalarField, IntField> field;
};

// Row names follow the randomization table verbatim so configuration files
// can be checked against it line by line.
const std::vector<Row>& rows() {
  static const std::vector<Row> r = {
      {"Max action delay", &RandomizationRanges::max_action_delay},
      {"Action delay chance", &RandomizationRanges::action_delay_chance},
      {"Min & max motor strength", &RandomizationRanges::motor_strength},
      {"Min & max P gain factor", &RandomizationRanges::p_gain_factor},
      {"Min & max D gain factor", &RandomizationRanges::d_gain_factor},
      {"Min & max joint position offset", &RandomizationRanges::joint_position_offset},
      {"Min & max starting orientation factor", &RandomizationRanges::starting_orientation_factor},
      {"Min & max starting joint position factor", &RandomizationRanges::starting_joint_position_factor},
      {"Min & max starting joint velocity factor", &RandomizationRanges::starting_joint_velocity_factor},
      {"Min & max starting linear velocity", &RandomizationRanges::starting_linear_velocity},
      {"Min & max starting angular velocity", &RandomizationRanges::starting_angular_velocity},
      {"Joint position noise", &RandomizationRanges::joint_position_noise},
      {"Joint velocity noise", &RandomizationRanges::joint_velocity_noise},
      {"Angular velocity noise", &RandomizationRanges::angular_velocity_noise},
      {"Gravity noise", &RandomizationRanges::gravity_noise},
      {"Joint observation dropout chance", &RandomizationRanges::joint_observation_dropout},
      {"Min & max static friction", &RandomizationRanges::static_friction},
      {"Min & max dynamic friction", &RandomizationRanges::dynamic_friction},
      {"Min & max restitution", &RandomizationRanges::restitution},
      {"Min & max added mass", &RandomizationRanges::added_mass},
      {"Min & max gravity", &RandomizationRanges::gravity},
      {"Min & max joint friction", &RandomizationRanges::joint_friction},
      {"Min & max joint armature", &RandomizationRanges::joint_armature},
      {"Min & max push velocity x", &RandomizationRanges::push_x},
      {"Min & max push velocity y", &RandomizationRanges::push_y},
      {"Min & max push velocity z", &RandomizationRanges::push_z},
      {"Resample probability", &RandomizationRanges::resample_probability},
  };
  return r;
}

Range scale_range(const Range& r, double k) {
  const double mid = r.mid();
  const double half = 0.5 * (r.hi - r.lo);
  return {mid - k * half, mid + k * half};
}

double draw(const Range& r, Rng& rng) {
  if (r.lo == r.hi) return r.lo;
  return rng.uniform(r.lo, r.hi);
}

// Midpoint of the unscaled gravity row; draws are offsets from it.
constexpr double kGravityMid = 1.0;
constexpr double kStandardGravity = 9.81;

Vector draw_vector(const Range& r, Rng& rng, int n) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = draw(r, rng);
  return v;
}

Vector symmetric_noise(double half, Rng& rng, int n) {
  return draw_vector(Range{-half, half}, rng, n);
}

void sample_physical(const RandomizationRanges& r, Rng& rng, int n, bool all, RandomizationDraw& d) {
  auto want = [&](PhysicalParam p) {
    const bool yes = all || rng.bernoulli(r.resample_probability);
    d.resampled[static_cast<std::size_t>(p)] = yes;
    return yes;
  };
  PhysicalParams& p = d.physical;
  if (want(PhysicalParam::kMotorStrength)) p.motor_strength = draw(r.motor_strength, rng);
  if (want(PhysicalParam::kPGainFactor)) p.p_gain_factor = draw(r.p_gain_factor, rng);
  if (want(PhysicalParam::kDGainFactor)) p.d_gain_factor = draw(r.d_gain_factor, rng);
  if (want(PhysicalParam::kJointPositionOffset)) p.joint_position_offset = draw_vector(r.joint_position_offset, rng, n);
  if (want(PhysicalParam::kStaticFriction)) p.static_friction = draw(r.static_friction, rng);
  if (want(PhysicalParam::kDynamicFriction)) p.dynamic_friction = draw(r.dynamic_friction, rng);
  if (want(PhysicalParam::kRestitution)) p.restitution = draw(r.restitution, rng);
  if (want(PhysicalParam::kAddedMass)) p.added_mass = draw(r.added_mass, rng);
  if (want(PhysicalParam::kGravity)) p.gravity = kStandardGravity + (draw(r.gravity, rng) - kGravityMid);
  if (want(PhysicalParam::kJointFriction)) p.joint_friction = draw(r.joint_friction, rng);
  if (want(PhysicalParam::kJointArmature)) p.joint_armature = draw(r.joint_armature, rng);
  // Pushes are events, never part of the episode-start draw.
  const bool push = !all && rng.bernoulli(r.resample_probability);
  d.resampled[static_cast<std::size_t>(PhysicalParam::kPush)] = push;
  if (push) d.push = Vec3(draw(r.push_x, rng), draw(r.push_y, rng), draw(r.push_z, rng));
}

}  // namespace

void check_ranges(const RandomizationRanges& r) {
  for (const auto& row : rows()) {
    if (const auto* f = std::get_if<RangeField>(&row.field)) {
      const Range& v = r.*(*f);
      if (!(v.lo <= v.hi) || !std::isfinite(v.lo) || !std::isfinite(v.hi)) {
        throw InvalidCurriculum(std::string(row.name) + ": min exceeds max");
      }
    }
  }
  for (double p : {r.action_delay_chance, r.joint_observation_dropout, r.resample_probability}) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidCurriculum("probability outside [0, 1]");
  }
  if (r.max_action_delay < 0) throw InvalidCurriculum("negative action delay");
}

RandomizationRanges scaled_ranges(const RandomizationRanges& base, double k) {
  if (!(k >= 0.0 && k <= 1.0)) throw InvalidCurriculum("curriculum coefficient must lie in [0, 1]");
  if (k == 1.0) return base;
  RandomizationRanges out = base;
  for (const auto& row : rows()) {
    if (const auto* f = std::get_if<RangeField>(&row.field)) out.*(*f) = scale_range(base.*(*f), k);
  }
  out.action_delay_chance = k * base.action_delay_chance;
  out.joint_position_noise = k * base.joint_position_noise;
  out.joint_velocity_noise = k * base.joint_velocity_noise;
  out.angular_velocity_noise = k * base.angular_velocity_noise;
  out.gravity_noise = k * base.gravity_noise;
  out.joint_observation_dropout = k * base.joint_observation_dropout;
  return out;
}

void write_ranges(std::ostream& out, const RandomizationRanges& r) {
  for (const auto& row : rows()) {
    out << row.name << ": ";
    if (const auto* f = std::get_if<RangeField>(&row.field)) {
      out << "(" << format_double((r.*(*f)).lo) << ", " << format_double((r.*(*f)).hi) << ")";
    } else if (const auto* s = std::get_if<ScalarField>(&row.field)) {
      out << format_double(r.*(*s));
    } else {
      out << r.*std::get<IntField>(row.field);
    }
    out << "\n";
  }
}

RandomizationRanges read_ranges(std::istream& in) {
  RandomizationRanges r;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto colon = t.find(':');
    if (colon == std::string::npos) throw ParseError("randomization config line " + std::to_string(lineno) + ": expected 'name: value'");
    const std::string name = trim(std::string_view(t).substr(0, colon));
    const std::string value = trim(std::string_view(t).substr(colon + 1));
    const Row* match = nullptr;
    for (const auto& row : rows()) {
      if (name == row.name) match = &row;
    }
    if (!match) throw ParseError("randomization config line " + std::to_string(lineno) + ": unknown row '" + name + "'");
    if (const auto* f = std::get_if<RangeField>(&match->field)) {
      if (value.size() < 2 || value.front() != '(' || value.back() != ')') {
        throw ParseError("randomization config: '" + name + "' expects (min, max)");
      }
      const auto parts = split(std::string_view(value).substr(1, value.size() - 2), ',');
      if (parts.size() != 2) throw ParseError("randomization config: '" + name + "' expects two values");
      r.*(*f) = Range{parse_double(trim(parts[0])), parse_double(trim(parts[1]))};
    } else if (const auto* s = std::get_if<ScalarField>(&match->field)) {
      r.*(*s) = parse_double(value);
    } else {
      const double v = parse_double(value);
      if (v != std::floor(v)) throw ParseError("randomization config: '" + name + "' expects an integer");
      r.*std::get<IntField>(match->field) = static_cast<int>(v);
    }
  }
  check_ranges(r);
  return r;
}

RandomizationRanges load_ranges(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_ranges(in);
}

CurriculumState::CurriculumState(double k) {
  if (!(k >= 0.0 && k <= 1.0)) throw InvalidCurriculum("curriculum coefficient must lie in [0, 1]");
  level_ = static_cast<int>(std::lround(k * 100.0));
}

void CurriculumState::update(bool fell, double mean_xy_tracking_error) {
  const bool success = !fell && mean_xy_tracking_error < kErrorThreshold;
  if (success) {
    ++successes_;
    streak_ = streak_ > 0 ? streak_ + 1 : 1;
    if (level_ < 100) ++level_;
  } else {
    ++failures_;
    streak_ = streak_ < 0 ? streak_ - 1 : -1;
    if (level_ > 0) --level_;
  }
}

CurriculumState update_curriculum(CurriculumState s, bool fell, double mean_xy_tracking_error) {
  s.update(fell, mean_xy_tracking_error);
  return s;
}

PhysicalParams nominal_physical(const RandomizationRanges& r, int num_joints) {
  PhysicalParams p;
  p.motor_strength = r.motor_strength.mid();
  p.p_gain_factor = r.p_gain_factor.mid();
  p.d_gain_factor = r.d_gain_factor.mid();
  p.joint_position_offset = Vector::Constant(num_joints, r.joint_position_offset.mid());
  p.static_friction = r.static_friction.mid();
  p.dynamic_friction = r.dynamic_friction.mid();
  p.restitution = r.restitution.mid();
  p.added_mass = r.added_mass.mid();
  p.gravity = kStandardGravity + (r.gravity.mid() - kGravityMid);
  p.joint_friction = r.joint_friction.mid();
  p.joint_armature = r.joint_armature.mid();
  return p;
}

RandomizationDraw sample_randomization(const RandomizationRanges& r, Rng& rng, RandomizationPhase phase,
                                       int num_joints) {
  if (num_joints < 0) throw ShapeMismatch("negative joint count");
  RandomizationDraw d;
  d.phase = phase;
  const int n = num_joints;
  if (phase == RandomizationPhase::kEpisodeStart) {
    d.start_orientation = Vec3(draw(r.starting_orientation_factor, rng), draw(r.starting_orientation_factor, rng),
                               draw(r.starting_orientation_factor, rng));
    d.start_joint_position_factor = draw_vector(r.starting_joint_position_factor, rng, n);
    d.start_joint_velocity_factor = draw_vector(r.starting_joint_velocity_factor, rng, n);
    for (int i = 0; i < 3; ++i) d.start_lin_vel[i] = draw(r.starting_linear_velocity, rng);
    for (int i = 0; i < 3; ++i) d.start_ang_vel[i] = draw(r.starting_angular_velocity, rng);
    d.physical = nominal_physical(r, n);
    sample_physical(r, rng, n, true, d);
    d.joint_position_noise = Vector::Zero(n);
    d.joint_velocity_noise = Vector::Zero(n);
    d.dropout.assign(static_cast<std::size_t>(n), false);
    return d;
  }
  d.joint_position_noise = symmetric_noise(r.joint_position_noise, rng, n);
  d.joint_velocity_noise = symmetric_noise(r.joint_velocity_noise, rng, n);
  for (int i = 0; i < 3; ++i) d.ang_vel_noise[i] = draw(Range{-r.angular_velocity_noise, r.angular_velocity_noise}, rng);
  for (int i = 0; i < 3; ++i) d.gravity_noise[i] = draw(Range{-r.gravity_noise, r.gravity_noise}, rng);
  d.dropout.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) d.dropout[static_cast<std::size_t>(i)] = rng.bernoulli(r.joint_observation_dropout);
  d.action_delayed = r.max_action_delay > 0 && rng.bernoulli(r.action_delay_chance);
  d.physical = nominal_physical(r, n);
  sample_physical(r, rng, n, false, d);
  return d;
}

void apply_physical(PhysicalParams& cur, const RandomizationDraw& d) {
  auto on = [&](PhysicalParam p) { return d.resampled[static_cast<std::size_t>(p)]; };
  const PhysicalParams& p = d.physical;
  if (on(PhysicalParam::kMotorStrength)) cur.motor_strength = p.motor_strength;
  if (on(PhysicalParam::kPGainFactor)) cur.p_gain_factor = p.p_gain_factor;
  if (on(PhysicalParam::kDGainFactor)) cur.d_gain_factor = p.d_gain_factor;
  if (on(PhysicalParam::kJointPositionOffset)) cur.joint_position_offset = p.joint_position_offset;
  if (on(PhysicalParam::kStaticFriction)) cur.static_friction = p.static_friction;
  if (on(PhysicalParam::kDynamicFriction)) cur.dynamic_friction = p.dynamic_friction;
  if (on(PhysicalParam::kRestitution)) cur.restitution = p.restitution;
  if (on(PhysicalParam::kAddedMass)) cur.added_mass = p.added_mass;
  if (on(PhysicalParam::kGravity)) cur.gravity = p.gravity;
  if (on(PhysicalParam::kJointFriction)) cur.joint_friction = p.joint_friction;
  if (on(PhysicalParam::kJointArmature)) cur.joint_armature = p.joint_armature;
}

}  // namespace embscale
