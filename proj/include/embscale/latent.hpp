#ifndef EMBSCALE_LATENT_HPP_
#define EMBSCALE_LATENT_HPP_

#include <iosfwd>
#include <string>
#include <vector>

#include "embscale/env.hpp"
#include "embscale/urma.hpp"

namespace embscale {

struct LatentLabel {
  std::string id;  // embodiment id, or "<embodiment id>/<joint name>" for joint rows
  std::string cls;
  int knee_count = 0;
  std::string tags;  // "all=1.1;thigh=0.9;..." (no commas)

  bool operator==(const LatentLabel&) const = default;
};

struct LatentMatrix {
  std::vector<LatentLabel> labels;
  Matrix values;  // one row per label
  std::string provenance;

  // Throws ShapeMismatch on a label/row mismatch, DegenerateInput on
  // non-finite entries.
  void check() const;
};

std::string variation_tags(const VariationSpec& v);
LatentLabel latent_label(const Embodiment& e);

// Mean action latent over a zero-command rollout of `steps` control steps
// driven by the network itself, at curriculum 0 with randomization off. One
// row per embodiment.
LatentMatrix action_latents(const UrmaNetwork& net, std::span<const double> params,
                            const std::vector<Embodiment>& embodiments, const EnvConfig& env_cfg, int steps = 100,
                            std::uint64_t seed = 0);

// Description latents of one head, one row per actuated joint.
LatentMatrix description_latents(const UrmaNetwork& net, std::span<const double> params,
                                 const std::vector<Embodiment>& embodiments, int head = 0);

struct PcaResult {
  Matrix coords;      // rows x k
  Vector explained;   // variance ratio per component, non-increasing
  Vector mean;        // column means
  Matrix components;  // cols x k, orthonormal
};

// Projects mean-centred rows onto the top-k principal axes. Component signs
// make the largest-magnitude loading positive. Throws ShapeMismatch unless
// rows >= 2 and 1 <= k <= min(rows - 1, cols), DegenerateInput when the
// centred matrix is zero.
PcaResult pca_project(const Matrix& m, int k = 2);
Matrix pca_reconstruct(const PcaResult& p);

// id,class,knee_count,tags,z_1..z_D with shortest round-trip numbers.
void write_latent_csv(std::ostream& out, const LatentMatrix& m);
LatentMatrix read_latent_csv(std::istream& in);
// id,pc1..pck
void write_pca_csv(std::ostream& out, const LatentMatrix& m, const PcaResult& p);

}  // namespace embscale

#endif  // EMBSCALE_LATENT_HPP_
