#ifndef EMBSCALE_TESTS_SUPPORT_HPP_
#define EMBSCALE_TESTS_SUPPORT_HPP_

#include <filesystem>
#include <random>
#include <string>

#include "embscale/embodiment.hpp"

namespace embscale::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("embscale_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string fixture(const std::string& name) { return std::string(EMBSCALE_FIXTURE_DIR) + "/" + name; }

// root box with a chain of revolute joints about z, each child a sphere
// `spacing` metres along x from its parent.
inline Embodiment chain(int joints, double spacing = 0.1, const std::string& id = "chain") {
  Embodiment e;
  e.id = id;
  e.cls = MorphologyClass::kQuadruped;
  e.links.push_back({"trunk", Shape::box(0.2, 0.1, 0.05), 2.0});
  for (int j = 0; j < joints; ++j) {
    const std::string parent = e.links.back().name;
    const std::string child = "link" + std::to_string(j);
    e.links.push_back({child, Shape::sphere(0.02), 0.5});
    JointSpec js;
    js.name = "joint" + std::to_string(j);
    js.parent_link = parent;
    js.child_link = child;
    js.origin_xyz = j == 0 ? Vec3::Zero() : Vec3(spacing, 0.0, 0.0);
    js.axis = Vec3::UnitZ();
    js.lower = -1.0;
    js.upper = 1.0;
    js.max_torque = 10.0;
    js.max_velocity = 5.0;
    e.joints.push_back(js);
  }
  update_derived(e);
  return e;
}

}  // namespace embscale::testing

#endif  // EMBSCALE_TESTS_SUPPORT_HPP_
