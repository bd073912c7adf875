#ifndef EMBSCALE_NN_HPP_
#define EMBSCALE_NN_HPP_

#include <Eigen/Core>

#include <map>
#include <span>
#include <string>
#include <vector>

#include "embscale/common.hpp"

namespace embscale {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using MatrixMap = Eigen::Map<Matrix>;

inline std::span<double> as_span(Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}
inline std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

// Named tensors laid out back to back in one flat parameter vector. Networks
// keep only offsets, so optimizers, gradient clipping, finite-difference
// checks and checkpoints all operate on plain vectors.
struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

class ParamLayout {
 public:
  std::size_t add(std::string name, int rows, int cols);
  const TensorSpec& operator[](std::size_t i) const { return tensors_[i]; }
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  std::size_t size() const { return size_; }

 private:
  std::vector<TensorSpec> tensors_;
  std::size_t size_ = 0;
};

enum class Activation { kNone, kElu };

// Fully connected stack: hidden layers use `hidden`, the last layer `output`.
// Batches are column-major: one sample per column.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamLayout& layout, const std::string& prefix, std::vector<int> widths,
      Activation hidden = Activation::kElu, Activation output = Activation::kNone);

  struct Cache {
    std::vector<Matrix> inputs;  // input of every layer
    std::vector<Matrix> outputs;  // activated output of every layer
  };

  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }
  std::size_t num_layers() const { return weights_.size(); }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void init(std::span<double> params, Rng& rng, double last_layer_gain = 1.0) const;

  Matrix forward(std::span<const double> params, const Matrix& x, Cache* cache = nullptr) const;
  // Accumulates parameter gradients into `grad` and returns dL/dx.
  Matrix backward(std::span<const double> params, const Cache& cache, const Matrix& dy,
                  std::span<double> grad) const;

 private:
  std::vector<int> widths_;
  std::vector<std::size_t> weights_;  // tensor offsets
  std::vector<std::size_t> biases_;
  Activation hidden_ = Activation::kElu;
  Activation output_ = Activation::kNone;
};

void elu_inplace(Matrix& x);
// dy <- dy * elu'(x), written in terms of the activated output y.
void elu_backward_inplace(Matrix& dy, const Matrix& y);

inline ConstMatrixMap tensor(std::span<const double> p, std::size_t offset, int rows, int cols) {
  return ConstMatrixMap(p.data() + offset, rows, cols);
}
inline MatrixMap tensor(std::span<double> p, std::size_t offset, int rows, int cols) {
  return MatrixMap(p.data() + offset, rows, cols);
}

// Scales `grad` so its L2 norm is at most max_norm; returns the norm before
// clipping.
double clip_grad_norm(std::span<double> grad, double max_norm);

// Adam with optional decoupled weight decay (AdamW).
class Adam {
 public:
  explicit Adam(std::size_t n = 0, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void reset(std::size_t n);
  // p <- p - lr * (mhat / (sqrt(vhat) + eps)) - lr * weight_decay * p
  void step(std::span<double> params, std::span<const double> grad, double lr, double weight_decay = 0.0);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  Vector m_, v_;
  std::size_t t_ = 0;
};

// --- checkpoint container -----------------------------------------------------
//
// "EMBSCKPT", u32 version, str kind, str config, u32 tensor count, then per
// tensor: str name, u32 rows, u32 cols, rows*cols f32 (column-major).
// Integers little-endian; strings carry a u32 length prefix.

struct Checkpoint {
  std::string kind;
  std::string config;
  std::vector<TensorSpec> tensors;
  Vector values;  // laid out like `tensors`
};

void save_checkpoint(const std::string& path, const std::string& kind, const std::string& config,
                     const ParamLayout& layout, std::span<const double> params);
Checkpoint load_checkpoint(const std::string& path);
// Copies tensors into `params` by name; throws ShapeMismatch on any missing
// or mis-shaped tensor.
void assign_checkpoint(const Checkpoint& ck, const ParamLayout& layout, std::span<double> params);

}  // namespace embscale

#endif  // EMBSCALE_NN_HPP_
