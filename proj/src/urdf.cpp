#include "embscale/urdf.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "embscale/procgen.hpp"

namespace embscale {

namespace pt = boost::property_tree;

namespace {

std::string vec_text(const Vec3& v) {
  return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
}

// Attribute values are numbers and identifiers; escape the XML specials anyway
// so arbitrary ids stay well-formed.
std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Solid-body inertia about the geometry centre, in the geometry frame.
Vec3 principal_inertia(const Shape& s, double m) {
  const auto& d = s.dims;
  switch (s.kind) {
    case Shape::Kind::kSphere: {
      const double i = 0.4 * m * d[0] * d[0];
      return Vec3(i, i, i);
    }
    case Shape::Kind::kCylinder: {
      const double ixx = m * (3.0 * d[1] * d[1] + d[0] * d[0]) / 12.0;
      return Vec3(ixx, ixx, 0.5 * m * d[1] * d[1]);
    }
    case Shape::Kind::kBox:
      return Vec3(m * (d[1] * d[1] + d[2] * d[2]) / 12.0, m * (d[0] * d[0] + d[2] * d[2]) / 12.0,
                  m * (d[0] * d[0] + d[1] * d[1]) / 12.0);
  }
  return Vec3::Zero();
}

std::string geometry_text(const Shape& s) {
  const auto& d = s.dims;
  switch (s.kind) {
    case Shape::Kind::kSphere:
      return "<sphere radius=\"" + format_double(d[0]) + "\"/>";
    case Shape::Kind::kCylinder:
      return "<cylinder radius=\"" + format_double(d[1]) + "\" length=\"" + format_double(d[0]) + "\"/>";
    case Shape::Kind::kBox:
      return "<box size=\"" + format_double(d[0]) + " " + format_double(d[1]) + " " +
             format_double(d[2]) + "\"/>";
  }
  return {};
}

}  // namespace

std::string to_urdf(const Embodiment& e) {
  require_valid(e);
  std::ostringstream o;
  o << "<?xml version=\"1.0\"?>\n";
  o << "<robot name=\"" << escape(e.id) << "\">\n";
  o << "  <morphology class=\"" << to_string(e.cls) << "\"/>\n";
  const VariationSpec& v = e.variation;
  o << "  <variation knees=\"" << v.knee_joint_count << "\" all=\"" << format_double(v.all_link_scale)
    << "\" thigh=\"" << format_double(v.thigh_length_scale) << "\" calf=\""
    << format_double(v.calf_length_scale) << "\" foot=\"" << format_double(v.foot_size_scale) << "\"";
  if (v.torso_size_scale) o << " torso=\"" << format_double(*v.torso_size_scale) << "\"";
  o << " knee_limit=\"" << format_double(v.knee_limit_scale) << "\"/>\n";

  for (const auto& l : e.links) {
    const std::string origin =
        "<origin xyz=\"" + vec_text(l.origin_xyz) + "\" rpy=\"" + vec_text(l.origin_rpy) + "\"/>";
    const Vec3 inertia = principal_inertia(l.shape, l.mass);
    o << "  <link name=\"" << escape(l.name) << "\">\n";
    o << "    <inertial>\n      " << origin << "\n";
    o << "      <mass value=\"" << format_double(l.mass) << "\"/>\n";
    o << "      <inertia ixx=\"" << format_double(inertia.x()) << "\" ixy=\"0\" ixz=\"0\" iyy=\""
      << format_double(inertia.y()) << "\" iyz=\"0\" izz=\"" << format_double(inertia.z()) << "\"/>\n";
    o << "    </inertial>\n";
    for (const char* tag : {"visual", "collision"}) {
      o << "    <" << tag << ">\n      " << origin << "\n";
      o << "      <geometry>" << geometry_text(l.shape) << "</geometry>\n";
      o << "    </" << tag << ">\n";
    }
    o << "  </link>\n";
  }
  for (const auto& j : e.joints) {
    o << "  <joint name=\"" << escape(j.name) << "\" type=\"" << (j.actuated() ? "revolute" : "fixed")
      << "\">\n";
    o << "    <parent link=\"" << escape(j.parent_link) << "\"/>\n";
    o << "    <child link=\"" << escape(j.child_link) << "\"/>\n";
    o << "    <origin xyz=\"" << vec_text(j.origin_xyz) << "\" rpy=\"" << vec_text(j.origin_rpy) << "\"/>\n";
    if (j.actuated()) {
      o << "    <axis xyz=\"" << vec_text(j.axis) << "\"/>\n";
      o << "    <limit lower=\"" << format_double(j.lower) << "\" upper=\"" << format_double(j.upper)
        << "\" effort=\"" << format_double(j.max_torque) << "\" velocity=\""
        << format_double(j.max_velocity) << "\"/>\n";
      o << "    <nominal_position value=\"" << format_double(j.nominal_angle) << "\"/>\n";
    }
    o << "  </joint>\n";
  }
  o << "</robot>\n";
  return o.str();
}

// --- parsing ----------------------------------------------------------------

namespace {

constexpr double kPlaceholderRadius = 1e-3;
constexpr double kPlaceholderMass = 1e-3;

std::optional<std::string> attr(const pt::ptree& node, const std::string& name) {
  if (auto a = node.get_child_optional("<xmlattr>." + name)) return a->data();
  return std::nullopt;
}

std::string require_attr(const pt::ptree& node, const std::string& name, const std::string& where) {
  auto a = attr(node, name);
  if (!a) throw ParseError(where + ": missing attribute '" + name + "'");
  return *a;
}

std::vector<double> numbers(const std::string& text, std::size_t expected, const std::string& where) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(parse_double(tok));
  if (out.size() != expected) {
    throw ParseError(where + ": expected " + std::to_string(expected) + " numbers in '" + text + "'");
  }
  return out;
}

Vec3 vec_attr(const pt::ptree& node, const std::string& name, const Vec3& fallback,
              const std::string& where) {
  auto a = attr(node, name);
  if (!a) return fallback;
  auto v = numbers(*a, 3, where);
  return Vec3(v[0], v[1], v[2]);
}

double num_attr(const pt::ptree& node, const std::string& name, const std::string& where) {
  return parse_double(require_attr(node, name, where));
}

void read_origin(const pt::ptree& parent, Vec3& xyz, Vec3& rpy, const std::string& where) {
  xyz.setZero();
  rpy.setZero();
  if (auto o = parent.get_child_optional("origin")) {
    xyz = vec_attr(*o, "xyz", Vec3::Zero(), where);
    rpy = vec_attr(*o, "rpy", Vec3::Zero(), where);
  }
}

// Reads primitive geometry from <collision>, falling back to <visual>.
// Returns false if the link has no primitive geometry.
bool read_geometry(const pt::ptree& link, LinkSpec& l, std::vector<std::string>& warnings) {
  const std::string where = "link '" + l.name + "'";
  for (const char* tag : {"collision", "visual"}) {
    for (const auto& [name, child] : link) {
      if (name != tag) continue;
      auto geom = child.get_child_optional("geometry");
      if (!geom) continue;
      if (auto s = geom->get_child_optional("sphere")) {
        l.shape = Shape::sphere(num_attr(*s, "radius", where));
      } else if (auto c = geom->get_child_optional("cylinder")) {
        l.shape = Shape::cylinder(num_attr(*c, "length", where), num_attr(*c, "radius", where));
      } else if (auto b = geom->get_child_optional("box")) {
        auto d = numbers(require_attr(*b, "size", where), 3, where);
        l.shape = Shape::box(d[0], d[1], d[2]);
      } else {
        if (geom->get_child_optional("mesh")) warnings.push_back(where + ": mesh geometry ignored");
        continue;
      }
      read_origin(child, l.origin_xyz, l.origin_rpy, where);
      return true;
    }
  }
  return false;
}

MorphologyClass infer_class(const Embodiment& e) {
  if (!e.links.empty() && e.links.front().name == "pelvis") return MorphologyClass::kHumanoid;
  const std::size_t feet = foot_links(e).size();
  if (feet == 4) return MorphologyClass::kQuadruped;
  if (feet == 6) return MorphologyClass::kHexapod;
  throw ParseError("cannot infer the morphology class (" + std::to_string(feet) +
                   " feet); supply it explicitly");
}

// Reorders links so the root comes first; the rest keep document order.
void check_topology(Embodiment& e) {
  std::set<std::string> names;
  for (const auto& l : e.links) {
    if (!names.insert(l.name).second) throw ParseError("duplicate link name '" + l.name + "'");
  }
  std::set<std::string> joint_names;
  std::map<std::string, std::string> parent_of;
  for (const auto& j : e.joints) {
    if (!joint_names.insert(j.name).second) throw ParseError("duplicate joint name '" + j.name + "'");
    if (!names.count(j.parent_link) || !names.count(j.child_link)) {
      throw ParseError("joint '" + j.name + "' references an unknown link");
    }
    if (!parent_of.emplace(j.child_link, j.parent_link).second) {
      throw UnsupportedTopology("link '" + j.child_link + "' has more than one parent");
    }
  }
  std::vector<std::string> roots;
  for (const auto& l : e.links) {
    if (!parent_of.count(l.name)) roots.push_back(l.name);
  }
  for (const auto& [child, parent] : parent_of) {
    std::string cur = parent;
    for (std::size_t steps = 0; parent_of.count(cur); ++steps) {
      if (cur == child || steps > parent_of.size()) {
        throw UnsupportedTopology("kinematic cycle through link '" + child + "'");
      }
      cur = parent_of.at(cur);
    }
    if (cur == child) throw UnsupportedTopology("kinematic cycle through link '" + child + "'");
  }
  if (roots.size() != 1) {
    throw UnsupportedTopology("expected one root link, found " + std::to_string(roots.size()));
  }
  auto it = std::find_if(e.links.begin(), e.links.end(),
                         [&](const LinkSpec& l) { return l.name == roots.front(); });
  std::rotate(e.links.begin(), it, it + 1);
}

}  // namespace

UrdfImport import_urdf(std::string_view doc, const UrdfImportOptions& opts) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(doc)};
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& err) {
    throw ParseError(std::string("malformed XML: ") + err.what());
  }
  auto robot_opt = tree.get_child_optional("robot");
  if (!robot_opt) throw ParseError("no <robot> element");
  const pt::ptree& robot = *robot_opt;

  UrdfImport out;
  Embodiment& e = out.embodiment;
  auto& warnings = out.warnings;
  e.id = attr(robot, "name").value_or("robot");

  std::optional<MorphologyClass> declared_cls;
  std::optional<VariationSpec> variation;
  std::map<std::string, double> declared_nominal;

  for (const auto& [tag, node] : robot) {
    if (tag == "<xmlattr>" || tag == "<xmlcomment>") continue;
    if (tag == "morphology") {
      declared_cls = class_from_string(require_attr(node, "class", "<morphology>"));
    } else if (tag == "variation") {
      VariationSpec v;
      const std::string w = "<variation>";
      v.knee_joint_count = static_cast<int>(num_attr(node, "knees", w));
      v.all_link_scale = num_attr(node, "all", w);
      v.thigh_length_scale = num_attr(node, "thigh", w);
      v.calf_length_scale = num_attr(node, "calf", w);
      v.foot_size_scale = num_attr(node, "foot", w);
      if (auto t = attr(node, "torso")) v.torso_size_scale = parse_double(*t);
      v.knee_limit_scale = num_attr(node, "knee_limit", w);
      variation = v;
    } else if (tag == "link") {
      LinkSpec l;
      l.name = require_attr(node, "name", "<link>");
      if (!read_geometry(node, l, warnings)) {
        warnings.push_back("link '" + l.name + "': no primitive geometry, using a " +
                           format_double(kPlaceholderRadius) + " m sphere");
        l.shape = Shape::sphere(kPlaceholderRadius);
      }
      if (auto m = node.get_child_optional("inertial.mass")) {
        l.mass = num_attr(*m, "value", "link '" + l.name + "'");
      }
      if (!(l.mass > 0.0)) {
        warnings.push_back("link '" + l.name + "': no positive mass, using " +
                           format_double(kPlaceholderMass) + " kg");
        l.mass = kPlaceholderMass;
      }
      e.links.push_back(std::move(l));
    } else if (tag == "joint") {
      JointSpec j;
      j.name = require_attr(node, "name", "<joint>");
      const std::string where = "joint '" + j.name + "'";
      const std::string type = require_attr(node, "type", where);
      auto parent = node.get_child_optional("parent");
      auto child = node.get_child_optional("child");
      if (!parent || !child) throw ParseError(where + ": missing parent or child");
      j.parent_link = require_attr(*parent, "link", where);
      j.child_link = require_attr(*child, "link", where);
      read_origin(node, j.origin_xyz, j.origin_rpy, where);
      if (type == "fixed") {
        j.type = JointType::kFixed;
      } else if (type == "revolute" || type == "continuous") {
        j.type = JointType::kRevolute;
        if (auto a = node.get_child_optional("axis")) j.axis = vec_attr(*a, "xyz", Vec3::UnitX(), where);
        const double n = j.axis.norm();
        if (!(n > 0.0)) throw ParseError(where + ": zero axis");
        j.axis /= n;
        auto limit = node.get_child_optional("limit");
        if (type == "revolute") {
          if (!limit) throw ParseError(where + ": revolute joint without <limit>");
          j.lower = num_attr(*limit, "lower", where);
          j.upper = num_attr(*limit, "upper", where);
        } else {
          j.lower = -std::numbers::pi;
          j.upper = std::numbers::pi;
        }
        if (limit) {
          if (auto eff = attr(*limit, "effort")) j.max_torque = parse_double(*eff);
          if (auto vel = attr(*limit, "velocity")) j.max_velocity = parse_double(*vel);
        }
        if (!(j.max_torque > 0.0) || !(j.max_velocity > 0.0)) {
          throw ParseError(where + ": effort and velocity limits must be positive");
        }
        if (auto nom = node.get_child_optional("nominal_position")) {
          declared_nominal[j.name] = num_attr(*nom, "value", where);
        }
      } else {
        throw UnsupportedTopology(where + ": unsupported joint type '" + type + "'");
      }
      e.joints.push_back(std::move(j));
    } else {
      warnings.push_back("<" + tag + "> ignored");
    }
  }
  if (e.links.empty()) throw ParseError("robot has no links");
  check_topology(e);

  e.cls = opts.cls ? *opts.cls : declared_cls ? *declared_cls : infer_class(e);
  e.variation = variation ? *variation : reference_variation(e.cls);
  for (auto& j : e.joints) {
    if (!j.actuated()) continue;
    auto it = declared_nominal.find(j.name);
    if (it != declared_nominal.end()) {
      j.nominal_angle = it->second;
      continue;
    }
    const double q = table_nominal_angle(e.cls, j.name);
    j.nominal_angle = std::clamp(q, j.lower, j.upper);
    if (j.nominal_angle != q) {
      warnings.push_back("joint '" + j.name + "': nominal angle clamped into limits");
    }
  }
  update_derived(e);
  require_valid(e);
  return out;
}

EmbodimentDescriptor descriptor_from_urdf(std::string_view doc, const ClassControlConstants& ctrl,
                                          const UrdfImportOptions& opts) {
  return descriptor_of(from_urdf(doc, opts), ctrl);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace embscale
