#ifndef EMBSCALE_URMA_HPP_
#define EMBSCALE_URMA_HPP_

#include <string>
#include <vector>

#include "embscale/embodiment.hpp"
#include "embscale/nn.hpp"

namespace embscale {

// Which axis the attention softmax normalizes over. kJoints lets joints
// compete per latent channel; kLatent normalizes each joint's scores over the
// latent channels.
enum class SoftmaxAxis { kJoints, kLatent };

struct UrmaConfig {
  int heads = 3;
  int latent_dim = 64;       // per head; shared by the description and observation encoders
  int encoder_hidden = 256;  // hidden width of both per-head encoders
  int general_dim = 256;     // projection of the general observation
  std::vector<int> core_hidden = {1024, 512};
  int action_latent_dim = 256;
  int action_desc_hidden = 256;
  int action_desc_dim = 128;
  std::vector<int> decoder_hidden = {1024, 256};
  SoftmaxAxis softmax_axis = SoftmaxAxis::kJoints;

  std::string to_text() const;
  static UrmaConfig from_text(const std::string& text);
  bool operator==(const UrmaConfig&) const = default;
};

// One batch of B samples from a single embodiment with J joints.
// joint_obs columns are laid out sample-major: column b*J + j.
struct UrmaInput {
  Matrix descriptors;  // J x 18
  Matrix general;      // 20 x B
  Matrix joint_obs;    // 3 x (B*J)

  int joints() const { return static_cast<int>(descriptors.rows()); }
  int batch() const { return static_cast<int>(general.cols()); }
};

struct LatentState {
  std::vector<Matrix> weights;        // per head, L x J attention weights
  std::vector<Matrix> joint_latents;  // per head, L x (B*J): z_j
  std::vector<Matrix> pooled;         // per head, L x B: sum over joints of z_j
  Matrix action_latent;               // action_latent_dim x B
};

struct UrmaOutput {
  Matrix actions;  // J x B
  LatentState latents;
};

class UrmaNetwork {
 public:
  explicit UrmaNetwork(UrmaConfig cfg = {});

  const UrmaConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t num_params() const { return layout_.size(); }

  // Deterministic in `seed`; every temperature starts at 1.
  Vector init_params(std::uint64_t seed) const;

  UrmaOutput forward(std::span<const double> params, const UrmaInput& in) const;

  // Mean squared error over all joints and samples; targets are J x B.
  double bc_loss(std::span<const double> params, const UrmaInput& in, const Matrix& targets) const;

  // Returns the loss and writes d(loss)/d(params) into `grad` (overwritten).
  // Throws NonFiniteLoss when the loss is not finite.
  double loss_and_grad(std::span<const double> params, const UrmaInput& in, const Matrix& targets,
                       std::span<double> grad) const;

  // Per-joint description latents f_phi(d_j) of one head (L x J), before the
  // temperature.
  Matrix description_latents(std::span<const double> params, const Matrix& descriptors, int head) const;

  double temperature(std::span<const double> params, int head) const;

  void save(const std::string& path, std::span<const double> params) const;
  // Returns the network described by the checkpoint and fills `params`.
  static UrmaNetwork load(const std::string& path, Vector& params);

 private:
  struct Cache;
  UrmaOutput run(std::span<const double> params, const UrmaInput& in, Cache* cache) const;
  void check(const UrmaInput& in) const;

  UrmaConfig cfg_;
  ParamLayout layout_;
  std::vector<Mlp> desc_enc_;  // f_phi per head
  std::vector<Mlp> obs_enc_;   // f_psi per head
  std::vector<std::size_t> log_tau_;
  Mlp general_proj_;
  Mlp core_;
  Mlp action_desc_;  // g_omega
  Mlp decoder_;
};

// Assembles the 20-component general observation: trunk linear velocity,
// gravity direction, command, then the static general descriptor and two
// reserved zeros.
Eigen::Matrix<double, kGeneralObservationDim, 1> general_observation(const Vec3& lin_vel,
                                                                    const Vec3& gravity,
                                                                    const Vec3& command,
                                                                    const GeneralDescriptor& g);

}  // namespace embscale

#endif  // EMBSCALE_URMA_HPP_
