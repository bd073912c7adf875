#include "embscale/latent.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/SVD>

namespace embscale {

void LatentMatrix::check() const {
  if (static_cast<Eigen::Index>(labels.size()) != values.rows()) throw ShapeMismatch("latent: labels do not match rows");
  if (!values.allFinite()) throw DegenerateInput("latent: non-finite entries");
}

std::string variation_tags(const VariationSpec& v) {
  std::ostringstream o;
  o << "knees=" << v.knee_joint_count << ";all=" << format_double(v.all_link_scale)
    << ";thigh=" << format_double(v.thigh_length_scale) << ";calf=" << format_double(v.calf_length_scale)
    << ";foot=" << format_double(v.foot_size_scale);
  if (v.torso_size_scale) o << ";torso=" << format_double(*v.torso_size_scale);
  o << ";knee_limit=" << format_double(v.knee_limit_scale);
  return o.str();
}

LatentLabel latent_label(const Embodiment& e) {
  return {e.id, std::string(to_string(e.cls)), e.variation.knee_joint_count, variation_tags(e.variation)};
}

LatentMatrix action_latents(const UrmaNetwork& net, std::span<const double> params,
                            const std::vector<Embodiment>& embodiments, const EnvConfig& env_cfg, int steps,
                            std::uint64_t seed) {
  if (steps < 1) throw ShapeMismatch("latent: rollout needs at least one step");
  EnvConfig cfg = env_cfg;
  cfg.randomize = false;
  cfg.command_x = cfg.command_y = cfg.command_yaw = Range{0.0, 0.0};
  LatentMatrix m;
  m.values.resize(static_cast<Eigen::Index>(embodiments.size()), net.config().action_latent_dim);
  for (std::size_t i = 0; i < embodiments.size(); ++i) {
    const SurrogateEnv env(embodiments[i], cfg);
    EnvState s = env.reset(0.0, Rng(seed));
    Observation o = env.observe(s);
    Vector sum = Vector::Zero(net.config().action_latent_dim);
    UrmaInput in;
    in.descriptors = env.descriptor().joints;
    for (int t = 0; t < steps; ++t) {
      in.general = env.general_obs(o);
      in.joint_obs = env.joint_obs(o);
      const UrmaOutput out = net.forward(params, in);
      sum += out.latents.action_latent.col(0);
      const StepResult r = env.step(s, out.actions.col(0));
      if (r.done) {
        s = env.reset(0.0, Rng(seed).fork(static_cast<std::uint64_t>(t)));
        o = env.observe(s);
      } else {
        o = r.obs;
      }
    }
    m.values.row(static_cast<Eigen::Index>(i)) = (sum / steps).transpose();
    m.labels.push_back(latent_label(embodiments[i]));
  }
  m.provenance = "action latent mean over " + std::to_string(steps) + " zero-command steps, k=0, no randomization";
  m.check();
  return m;
}

LatentMatrix description_latents(const UrmaNetwork& net, std::span<const double> params,
                                 const std::vector<Embodiment>& embodiments, int head) {
  LatentMatrix m;
  std::vector<Matrix> blocks;
  Eigen::Index rows = 0;
  for (const auto& e : embodiments) {
    const Matrix z = net.description_latents(params, descriptor_of(e).joints, head);  // L x J
    const auto act = e.actuated_joints();
    const LatentLabel base = latent_label(e);
    for (std::size_t j = 0; j < act.size(); ++j) {
      LatentLabel l = base;
      l.id = e.id + "/" + e.joints[act[j]].name;
      m.labels.push_back(std::move(l));
    }
    rows += z.cols();
    blocks.push_back(z.transpose());
  }
  m.values.resize(rows, blocks.empty() ? 0 : blocks.front().cols());
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    m.values.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  m.provenance = "description latents, head " + std::to_string(head);
  m.check();
  return m;
}

PcaResult pca_project(const Matrix& m, int k) {
  const Eigen::Index n = m.rows();
  const Eigen::Index d = m.cols();
  if (n < 2) throw ShapeMismatch("pca: need at least two rows");
  if (k < 1 || k > std::min(n - 1, d)) throw ShapeMismatch("pca: k must lie in [1, min(rows - 1, cols)]");
  if (!m.allFinite()) throw DegenerateInput("pca: non-finite input");
  PcaResult p;
  p.mean = m.colwise().mean().transpose();
  const Matrix x = m.rowwise() - p.mean.transpose();
  Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinV);
  const Vector sv = svd.singularValues();
  const double total = sv.squaredNorm();
  if (!(total > 0.0)) throw DegenerateInput("pca: all rows are identical");
  p.components = svd.matrixV().leftCols(k);
  for (int c = 0; c < k; ++c) {
    Eigen::Index arg = 0;
    p.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (p.components(arg, c) < 0.0) p.components.col(c) *= -1.0;
  }
  p.explained = sv.head(k).array().square() / total;
  p.coords = x * p.components;
  return p;
}

Matrix pca_reconstruct(const PcaResult& p) {
  return (p.coords * p.components.transpose()).rowwise() + p.mean.transpose();
}

void write_latent_csv(std::ostream& out, const LatentMatrix& m) {
  m.check();
  out << "id,class,knee_count,tags";
  for (Eigen::Index c = 0; c < m.values.cols(); ++c) out << ",z_" << c + 1;
  out << "\n";
  for (std::size_t r = 0; r < m.labels.size(); ++r) {
    const auto& l = m.labels[r];
    for (const std::string* s : {&l.id, &l.cls, &l.tags}) {
      if (s->find(',') != std::string::npos) throw ShapeMismatch("latent: labels must not contain commas");
    }
    out << l.id << "," << l.cls << "," << l.knee_count << "," << l.tags;
    for (Eigen::Index c = 0; c < m.values.cols(); ++c) out << "," << format_double(m.values(static_cast<Eigen::Index>(r), c));
    out << "\n";
  }
}

LatentMatrix read_latent_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("latent csv: empty");
  const auto header = split(line, ',');
  if (header.size() < 4 || header[0] != "id") throw ParseError("latent csv: bad header");
  const std::size_t D = header.size() - 4;
  LatentMatrix m;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) throw ParseError("latent csv: ragged row");
    m.labels.push_back({f[0], f[1], std::stoi(f[2]), f[3]});
    std::vector<double> v;
    for (std::size_t c = 0; c < D; ++c) v.push_back(parse_double(f[4 + c]));
    rows.push_back(std::move(v));
  }
  m.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(D));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < D; ++c) m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  m.check();
  return m;
}

void write_pca_csv(std::ostream& out, const LatentMatrix& m, const PcaResult& p) {
  if (p.coords.rows() != static_cast<Eigen::Index>(m.labels.size())) throw ShapeMismatch("pca csv: row mismatch");
  out << "id";
  for (Eigen::Index c = 0; c < p.coords.cols(); ++c) out << ",pc" << c + 1;
  out << "\n";
  for (std::size_t r = 0; r < m.labels.size(); ++r) {
    out << m.labels[r].id;
    for (Eigen::Index c = 0; c < p.coords.cols(); ++c) out << "," << format_double(p.coords(static_cast<Eigen::Index>(r), c));
    out << "\n";
  }
}

}  // namespace embscale
