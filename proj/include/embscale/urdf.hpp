#ifndef EMBSCALE_URDF_HPP_
#define EMBSCALE_URDF_HPP_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "embscale/embodiment.hpp"

namespace embscale {

// Serializes links then joints in construction order. Besides standard URDF,
// the document carries <morphology>, <variation> and per-joint
// <nominal_position> elements so generated robots round-trip exactly; other
// URDF consumers ignore them.
std::string to_urdf(const Embodiment& e);

struct UrdfImportOptions {
  // Overrides class inference (root "pelvis" -> humanoid, 4 feet ->
  // quadruped, 6 feet -> hexapod).
  std::optional<MorphologyClass> cls;
};

struct UrdfImport {
  Embodiment embodiment;
  std::vector<std::string> warnings;  // ignored elements, substituted values
};

// Throws ParseError on malformed XML or missing required fields and
// UnsupportedTopology on cycles, shared children or several roots.
UrdfImport import_urdf(std::string_view doc, const UrdfImportOptions& opts = {});

inline Embodiment from_urdf(std::string_view doc, const UrdfImportOptions& opts = {}) {
  return import_urdf(doc, opts).embodiment;
}

EmbodimentDescriptor descriptor_from_urdf(std::string_view doc, const ClassControlConstants& ctrl,
                                          const UrdfImportOptions& opts = {});

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace embscale

#endif  // EMBSCALE_URDF_HPP_
