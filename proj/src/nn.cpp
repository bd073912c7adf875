#include "embscale/nn.hpp"

#include <cmath>
#include <fstream>

namespace embscale {

std::size_t ParamLayout::add(std::string name, int rows, int cols) {
  TensorSpec t{std::move(name), rows, cols, size_};
  size_ += t.size();
  tensors_.push_back(std::move(t));
  return tensors_.back().offset;
}

void elu_inplace(Matrix& x) {
  x = x.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
}

void elu_backward_inplace(Matrix& dy, const Matrix& y) {
  dy = dy.binaryExpr(y, [](double g, double out) { return out > 0.0 ? g : g * (out + 1.0); });
}

Mlp::Mlp(ParamLayout& layout, const std::string& prefix, std::vector<int> widths, Activation hidden,
         Activation output)
    : widths_(std::move(widths)), hidden_(hidden), output_(output) {
  if (widths_.size() < 2) throw ShapeMismatch("Mlp needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    const std::string n = prefix + "." + std::to_string(i);
    weights_.push_back(layout.add(n + ".weight", widths_[i + 1], widths_[i]));
    biases_.push_back(layout.add(n + ".bias", widths_[i + 1], 1));
  }
}

void Mlp::init(std::span<double> params, Rng& rng, double last_layer_gain) const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const int in = widths_[l];
    const int out = widths_[l + 1];
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    if (l + 1 == weights_.size()) bound *= last_layer_gain;
    auto w = tensor(params, weights_[l], out, in);
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-bound, bound);
    auto b = tensor(params, biases_[l], out, 1);
    for (Eigen::Index r = 0; r < b.rows(); ++r) b(r, 0) = rng.uniform(-bound, bound);
  }
}

Matrix Mlp::forward(std::span<const double> params, const Matrix& x, Cache* cache) const {
  if (x.rows() != in_dim()) {
    throw ShapeMismatch("Mlp input has " + std::to_string(x.rows()) + " rows, expected " +
                        std::to_string(in_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
  }
  Matrix h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const int in = widths_[l];
    const int out = widths_[l + 1];
    if (cache) cache->inputs.push_back(h);
    Matrix y = tensor(params, weights_[l], out, in) * h;
    y.colwise() += tensor(params, biases_[l], out, 1).col(0);
    const Activation act = l + 1 == weights_.size() ? output_ : hidden_;
    if (act == Activation::kElu) elu_inplace(y);
    if (cache) cache->outputs.push_back(y);
    h = std::move(y);
  }
  return h;
}

Matrix Mlp::backward(std::span<const double> params, const Cache& cache, const Matrix& dy,
                     std::span<double> grad) const {
  Matrix g = dy;
  for (std::size_t li = weights_.size(); li-- > 0;) {
    const int in = widths_[li];
    const int out = widths_[li + 1];
    const Activation act = li + 1 == weights_.size() ? output_ : hidden_;
    if (act == Activation::kElu) elu_backward_inplace(g, cache.outputs[li]);
    tensor(grad, weights_[li], out, in).noalias() += g * cache.inputs[li].transpose();
    tensor(grad, biases_[li], out, 1).col(0) += g.rowwise().sum();
    g = tensor(params, weights_[li], out, in).transpose() * g;
  }
  return g;
}

double clip_grad_norm(std::span<double> grad, double max_norm) {
  Eigen::Map<Vector> g(grad.data(), static_cast<Eigen::Index>(grad.size()));
  const double norm = g.norm();
  if (norm > max_norm && norm > 0.0) g *= max_norm / norm;
  return norm;
}

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  reset(n);
}

void Adam::reset(std::size_t n) {
  m_ = Vector::Zero(static_cast<Eigen::Index>(n));
  v_ = Vector::Zero(static_cast<Eigen::Index>(n));
  t_ = 0;
}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr, double weight_decay) {
  if (params.size() != static_cast<std::size_t>(m_.size()) || grad.size() != params.size()) {
    throw ShapeMismatch("Adam: parameter/gradient size mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grad[i];
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grad[i] * grad[i];
    const double mhat = m_[k] / c1;
    const double vhat = v_[k] / c2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + eps_)) + lr * weight_decay * params[i];
  }
}

// --- checkpoint container -----------------------------------------------------

namespace {
constexpr char kMagic[] = "EMBSCKPT";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const std::string& kind, const std::string& config,
                     const ParamLayout& layout, std::span<const double> params) {
  if (params.size() != layout.size()) throw ShapeMismatch("checkpoint: parameter count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  BinaryWriter w(out);
  w.bytes(std::string_view(kMagic, 8));
  w.u32(kVersion);
  w.str(kind);
  w.str(config);
  w.u32(static_cast<std::uint32_t>(layout.tensors().size()));
  for (const auto& t : layout.tensors()) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.rows));
    w.u32(static_cast<std::uint32_t>(t.cols));
    w.f32_array(params.subspan(t.offset, t.size()));
  }
  if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  BinaryReader r(in);
  if (r.bytes(8) != std::string_view(kMagic, 8)) throw IoError(path + ": not a checkpoint file");
  if (r.u32() != kVersion) throw IoError(path + ": unsupported checkpoint version");
  Checkpoint ck;
  ck.kind = r.str();
  ck.config = r.str();
  const std::uint32_t n = r.u32();
  std::vector<double> values;
  std::size_t offset = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorSpec t;
    t.name = r.str();
    t.rows = static_cast<int>(r.u32());
    t.cols = static_cast<int>(r.u32());
    t.offset = offset;
    if (t.size() > (std::size_t{1} << 30)) throw IoError(path + ": tensor too large");
    values.resize(offset + t.size());
    r.f32_array(std::span<double>(values).subspan(offset, t.size()));
    offset += t.size();
    ck.tensors.push_back(std::move(t));
  }
  ck.values = Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  return ck;
}

void assign_checkpoint(const Checkpoint& ck, const ParamLayout& layout, std::span<double> params) {
  if (params.size() != layout.size()) throw ShapeMismatch("assign_checkpoint: wrong parameter vector");
  std::map<std::string, const TensorSpec*> by_name;
  for (const auto& t : ck.tensors) by_name[t.name] = &t;
  for (const auto& t : layout.tensors()) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) throw ShapeMismatch("checkpoint lacks tensor " + t.name);
    if (it->second->rows != t.rows || it->second->cols != t.cols) {
      throw ShapeMismatch("checkpoint tensor " + t.name + " has the wrong shape");
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      params[t.offset + i] = ck.values[static_cast<Eigen::Index>(it->second->offset + i)];
    }
  }
}

}  // namespace embscale
