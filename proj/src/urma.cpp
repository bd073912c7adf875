#include "embscale/urma.hpp"

#include <cmath>
#include <sstream>

namespace embscale {

namespace {

std::vector<int> concat(int first, const std::vector<int>& mid, int last) {
  std::vector<int> w{first};
  w.insert(w.end(), mid.begin(), mid.end());
  w.push_back(last);
  return w;
}

// Column-wise (axis 0) or row-wise (axis 1) softmax of scores s.
Matrix softmax(const Matrix& s, SoftmaxAxis axis) {
  Matrix w(s.rows(), s.cols());
  if (axis == SoftmaxAxis::kJoints) {
    for (Eigen::Index l = 0; l < s.rows(); ++l) {
      const double mx = s.row(l).maxCoeff();
      w.row(l) = (s.row(l).array() - mx).exp();
      w.row(l) /= w.row(l).sum();
    }
  } else {
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      const double mx = s.col(j).maxCoeff();
      w.col(j) = (s.col(j).array() - mx).exp();
      w.col(j) /= w.col(j).sum();
    }
  }
  return w;
}

// Gradient through the softmax: ds = w * (dw - <w, dw>) along the axis.
Matrix softmax_backward(const Matrix& w, const Matrix& dw, SoftmaxAxis axis) {
  const Matrix prod = w.cwiseProduct(dw);
  if (axis == SoftmaxAxis::kJoints) {
    const Vector dot = prod.rowwise().sum();
    return prod - w.cwiseProduct(dot.replicate(1, w.cols()));
  }
  const Eigen::RowVectorXd dot = prod.colwise().sum();
  return prod - w.cwiseProduct(dot.replicate(w.rows(), 1));
}

}  // namespace

std::string UrmaConfig::to_text() const {
  std::ostringstream o;
  o << "heads=" << heads << " latent_dim=" << latent_dim << " encoder_hidden=" << encoder_hidden
    << " general_dim=" << general_dim << " core_hidden=" << join_ints(core_hidden)
    << " action_latent_dim=" << action_latent_dim << " action_desc_hidden=" << action_desc_hidden
    << " action_desc_dim=" << action_desc_dim << " decoder_hidden=" << join_ints(decoder_hidden)
    << " softmax_axis=" << (softmax_axis == SoftmaxAxis::kJoints ? "joints" : "latent");
  return o.str();
}

UrmaConfig UrmaConfig::from_text(const std::string& text) {
  UrmaConfig c;
  std::istringstream in(text);
  std::string field;
  while (in >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ParseError("bad config field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    auto one = [&]() {
      auto v = parse_ints(value);
      if (v.size() != 1) throw ParseError("bad value for " + key);
      return v[0];
    };
    if (key == "heads") c.heads = one();
    else if (key == "latent_dim") c.latent_dim = one();
    else if (key == "encoder_hidden") c.encoder_hidden = one();
    else if (key == "general_dim") c.general_dim = one();
    else if (key == "core_hidden") c.core_hidden = parse_ints(value);
    else if (key == "action_latent_dim") c.action_latent_dim = one();
    else if (key == "action_desc_hidden") c.action_desc_hidden = one();
    else if (key == "action_desc_dim") c.action_desc_dim = one();
    else if (key == "decoder_hidden") c.decoder_hidden = parse_ints(value);
    else if (key == "softmax_axis") {
      if (value == "joints") c.softmax_axis = SoftmaxAxis::kJoints;
      else if (value == "latent") c.softmax_axis = SoftmaxAxis::kLatent;
      else throw ParseError("bad softmax_axis '" + value + "'");
    } else {
      throw ParseError("unknown config key '" + key + "'");
    }
  }
  return c;
}

UrmaNetwork::UrmaNetwork(UrmaConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.heads < 1 || cfg_.latent_dim < 1) throw ShapeMismatch("URMA needs heads >= 1 and latent_dim >= 1");
  const int L = cfg_.latent_dim;
  for (int h = 0; h < cfg_.heads; ++h) {
    const std::string p = "head" + std::to_string(h);
    desc_enc_.emplace_back(layout_, p + ".desc_encoder",
                           std::vector<int>{kJointDescriptorDim, cfg_.encoder_hidden, L}, Activation::kElu,
                           Activation::kNone);
    obs_enc_.emplace_back(layout_, p + ".obs_encoder",
                          std::vector<int>{kJointObservationDim, cfg_.encoder_hidden, L}, Activation::kElu,
                          Activation::kElu);
    log_tau_.push_back(layout_.add(p + ".log_temperature", 1, 1));
  }
  general_proj_ = Mlp(layout_, "general_proj", {kGeneralObservationDim, cfg_.general_dim}, Activation::kElu,
                      Activation::kElu);
  core_ = Mlp(layout_, "core", concat(cfg_.heads * L + cfg_.general_dim, cfg_.core_hidden, cfg_.action_latent_dim),
              Activation::kElu, Activation::kElu);
  action_desc_ = Mlp(layout_, "action_desc_encoder",
                     {kJointDescriptorDim, cfg_.action_desc_hidden, cfg_.action_desc_dim}, Activation::kElu,
                     Activation::kElu);
  decoder_ = Mlp(layout_, "decoder",
                 concat(cfg_.action_desc_dim + cfg_.action_latent_dim + cfg_.heads * L, cfg_.decoder_hidden, 1),
                 Activation::kElu, Activation::kNone);
}

Vector UrmaNetwork::init_params(std::uint64_t seed) const {
  Vector p = Vector::Zero(static_cast<Eigen::Index>(layout_.size()));
  std::span<double> s(p.data(), static_cast<std::size_t>(p.size()));
  Rng rng(seed);
  for (int h = 0; h < cfg_.heads; ++h) {
    desc_enc_[h].init(s, rng);
    obs_enc_[h].init(s, rng);
    s[log_tau_[h]] = 0.0;
  }
  general_proj_.init(s, rng);
  core_.init(s, rng);
  action_desc_.init(s, rng);
  decoder_.init(s, rng);
  return p;
}

double UrmaNetwork::temperature(std::span<const double> params, int head) const {
  return std::exp(params[log_tau_.at(static_cast<std::size_t>(head))]);
}

Matrix UrmaNetwork::description_latents(std::span<const double> params, const Matrix& descriptors,
                                        int head) const {
  return desc_enc_.at(static_cast<std::size_t>(head)).forward(params, descriptors.transpose());
}

void UrmaNetwork::check(const UrmaInput& in) const {
  const Eigen::Index J = in.descriptors.rows();
  const Eigen::Index B = in.general.cols();
  if (J < 1) throw ShapeMismatch("URMA input needs at least one joint");
  if (in.descriptors.cols() != kJointDescriptorDim) throw ShapeMismatch("descriptor rows must have 18 components");
  if (in.general.rows() != kGeneralObservationDim) throw ShapeMismatch("general observation must have 20 rows");
  if (in.joint_obs.rows() != kJointObservationDim) throw ShapeMismatch("joint observation must have 3 rows");
  if (in.joint_obs.cols() != B * J) {
    throw ShapeMismatch("joint observation has " + std::to_string(in.joint_obs.cols()) + " columns, expected " +
                        std::to_string(B * J));
  }
}

struct UrmaNetwork::Cache {
  std::vector<Mlp::Cache> desc, obs;
  std::vector<Matrix> scores;  // L x J, before the temperature
  std::vector<Matrix> psi;     // L x BJ
  Mlp::Cache general, core, action_desc, decoder;
};

UrmaOutput UrmaNetwork::run(std::span<const double> params, const UrmaInput& in, Cache* cache) const {
  check(in);
  const int J = in.joints();
  const int B = in.batch();
  const int L = cfg_.latent_dim;
  const int H = cfg_.heads;
  const Matrix dT = in.descriptors.transpose();  // 18 x J

  if (cache) {
    cache->desc.resize(H);
    cache->obs.resize(H);
    cache->scores.resize(H);
    cache->psi.resize(H);
  }
  UrmaOutput out;
  LatentState& lat = out.latents;
  Matrix core_in(H * L + cfg_.general_dim, B);
  for (int h = 0; h < H; ++h) {
    Matrix s = desc_enc_[h].forward(params, dT, cache ? &cache->desc[h] : nullptr);
    const double tau = std::exp(params[log_tau_[h]]);
    Matrix w = softmax(s / tau, cfg_.softmax_axis);
    Matrix psi = obs_enc_[h].forward(params, in.joint_obs, cache ? &cache->obs[h] : nullptr);
    Matrix z(L, static_cast<Eigen::Index>(B) * J);
    Matrix pooled = Matrix::Zero(L, B);
    for (int b = 0; b < B; ++b) {
      auto zb = z.middleCols(static_cast<Eigen::Index>(b) * J, J);
      zb = psi.middleCols(static_cast<Eigen::Index>(b) * J, J).cwiseProduct(w);
      pooled.col(b) = zb.rowwise().sum();
    }
    core_in.middleRows(static_cast<Eigen::Index>(h) * L, L) = pooled;
    if (cache) {
      cache->scores[h] = std::move(s);
      cache->psi[h] = std::move(psi);
    }
    lat.weights.push_back(std::move(w));
    lat.joint_latents.push_back(std::move(z));
    lat.pooled.push_back(std::move(pooled));
  }
  core_in.bottomRows(cfg_.general_dim) =
      general_proj_.forward(params, in.general, cache ? &cache->general : nullptr);
  lat.action_latent = core_.forward(params, core_in, cache ? &cache->core : nullptr);

  const Matrix g = action_desc_.forward(params, dT, cache ? &cache->action_desc : nullptr);  // Dg x J
  const int Dg = cfg_.action_desc_dim;
  const int Da = cfg_.action_latent_dim;
  Matrix dec_in(Dg + Da + H * L, static_cast<Eigen::Index>(B) * J);
  for (int b = 0; b < B; ++b) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(b) * J;
    dec_in.block(0, c0, Dg, J) = g;
    dec_in.block(Dg, c0, Da, J) = lat.action_latent.col(b).replicate(1, J);
    for (int h = 0; h < H; ++h) {
      dec_in.block(Dg + Da + static_cast<Eigen::Index>(h) * L, c0, L, J) = lat.joint_latents[h].middleCols(c0, J);
    }
  }
  const Matrix a = decoder_.forward(params, dec_in, cache ? &cache->decoder : nullptr);  // 1 x BJ
  out.actions = Eigen::Map<const Matrix>(a.data(), J, B);
  return out;
}

UrmaOutput UrmaNetwork::forward(std::span<const double> params, const UrmaInput& in) const {
  if (params.size() != layout_.size()) throw ShapeMismatch("URMA parameter vector has the wrong size");
  return run(params, in, nullptr);
}

double UrmaNetwork::bc_loss(std::span<const double> params, const UrmaInput& in, const Matrix& targets) const {
  const Matrix a = forward(params, in).actions;
  if (targets.rows() != a.rows() || targets.cols() != a.cols()) throw ShapeMismatch("BC targets must be J x B");
  return (a - targets).squaredNorm() / static_cast<double>(a.size());
}

double UrmaNetwork::loss_and_grad(std::span<const double> params, const UrmaInput& in, const Matrix& targets,
                                  std::span<double> grad) const {
  if (params.size() != layout_.size() || grad.size() != layout_.size()) {
    throw ShapeMismatch("URMA parameter/gradient vector has the wrong size");
  }
  Cache cache;
  UrmaOutput out = run(params, in, &cache);
  if (targets.rows() != out.actions.rows() || targets.cols() != out.actions.cols()) {
    throw ShapeMismatch("BC targets must be J x B");
  }
  const Matrix resid = out.actions - targets;
  const double loss = resid.squaredNorm() / static_cast<double>(resid.size());
  if (!std::isfinite(loss)) throw NonFiniteLoss("behaviour-cloning loss is not finite");
  std::fill(grad.begin(), grad.end(), 0.0);

  const int J = in.joints();
  const int B = in.batch();
  const int L = cfg_.latent_dim;
  const int H = cfg_.heads;
  const int Dg = cfg_.action_desc_dim;
  const int Da = cfg_.action_latent_dim;

  const Matrix da = (2.0 / static_cast<double>(resid.size())) * Eigen::Map<const Matrix>(resid.data(), 1, resid.size());
  const Matrix ddec = decoder_.backward(params, cache.decoder, da, grad);

  Matrix dg = Matrix::Zero(Dg, J);
  Matrix dza(Da, B);
  std::vector<Matrix> dz(H);
  for (int h = 0; h < H; ++h) dz[h] = ddec.middleRows(Dg + Da + static_cast<Eigen::Index>(h) * L, L);
  for (int b = 0; b < B; ++b) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(b) * J;
    dg += ddec.block(0, c0, Dg, J);
    dza.col(b) = ddec.block(Dg, c0, Da, J).rowwise().sum();
  }
  const Matrix dT = in.descriptors.transpose();
  action_desc_.backward(params, cache.action_desc, dg, grad);

  const Matrix dcore = core_.backward(params, cache.core, dza, grad);
  general_proj_.backward(params, cache.general, dcore.bottomRows(cfg_.general_dim), grad);

  for (int h = 0; h < H; ++h) {
    const Matrix& w = out.latents.weights[h];
    const Matrix& psi = cache.psi[h];
    const auto dpooled = dcore.middleRows(static_cast<Eigen::Index>(h) * L, L);
    Matrix dpsi(L, static_cast<Eigen::Index>(B) * J);
    Matrix dw = Matrix::Zero(L, J);
    for (int b = 0; b < B; ++b) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(b) * J;
      // z_j = w_j * psi_j and pooled = sum_j z_j, so dz_j gains dpooled.
      Matrix dzb = dz[h].middleCols(c0, J);
      dzb.colwise() += dpooled.col(b);
      dpsi.middleCols(c0, J) = dzb.cwiseProduct(w);
      dw += dzb.cwiseProduct(psi.middleCols(c0, J));
    }
    obs_enc_[h].backward(params, cache.obs[h], dpsi, grad);

    const double tau = std::exp(params[log_tau_[h]]);
    const Matrix dscaled = softmax_backward(w, dw, cfg_.softmax_axis);  // d/d(s / tau)
    desc_enc_[h].backward(params, cache.desc[h], dscaled / tau, grad);
    // d(s/tau)/d(log tau) = -s/tau
    grad[log_tau_[h]] += -(dscaled.cwiseProduct(cache.scores[h]).sum()) / tau;
  }
  return loss;
}

void UrmaNetwork::save(const std::string& path, std::span<const double> params) const {
  save_checkpoint(path, "urma", cfg_.to_text(), layout_, params);
}

UrmaNetwork UrmaNetwork::load(const std::string& path, Vector& params) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "urma") throw IoError(path + ": checkpoint kind '" + ck.kind + "' is not urma");
  UrmaNetwork net(UrmaConfig::from_text(ck.config));
  params = Vector::Zero(static_cast<Eigen::Index>(net.num_params()));
  assign_checkpoint(ck, net.layout(), std::span<double>(params.data(), static_cast<std::size_t>(params.size())));
  return net;
}

Eigen::Matrix<double, kGeneralObservationDim, 1> general_observation(const Vec3& lin_vel, const Vec3& gravity,
                                                                    const Vec3& command,
                                                                    const GeneralDescriptor& g) {
  Eigen::Matrix<double, kGeneralObservationDim, 1> o;
  o.segment<3>(0) = lin_vel;
  o.segment<3>(3) = gravity;
  o.segment<3>(6) = command;
  for (int i = 0; i < kGeneralDescriptorDim; ++i) o[9 + i] = g[static_cast<std::size_t>(i)];
  o[18] = 0.0;
  o[19] = 0.0;
  return o;
}

}  // namespace embscale
