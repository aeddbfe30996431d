#pragma once

// Minimal reverse-mode automatic differentiation over dense float32 tensors.
//
// A Tensor is a shared handle to a Node holding a value buffer, a lazily
// allocated gradient buffer, and (for op results) the parents and backward
// closure that produced it. Only the op set needed by the physics-guided
// network is provided; shapes are checked on every op.

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pgasr/grid_graph.hpp"

namespace pgasr::ag {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::span<float> grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<float> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const float> data() const { return node_->value; }
  std::span<float> mutable_data() { return node_->value; }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_->requires_grad; }

  float item() const;
  void zero_grad();
  // Seeds d(self)/d(self) = 1 for a scalar and propagates to every leaf.
  void backward();
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

// Disables tape recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Graph operator shared by every propagation op on the tape. Keeps the
// transpose for the backward pass.
struct NodeOperator {
  graph::SparseMatrix forward;
  graph::SparseMatrix transpose;

  static std::shared_ptr<const NodeOperator> from_dense(const Eigen::MatrixXd& m);
};

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// y[..., :] = x[..., :] W + b, with W of shape [C_in, C_out]. bias may be
// undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Gated linear unit over the last axis: first half * sigmoid(second half).
Tensor glu(const Tensor& x);

// Normalizes every row of the last axis, then applies gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, float eps = 1e-5F);

// Inverted dropout. Identity when rate == 0 or rng is null.
Tensor dropout(const Tensor& x, float rate, std::mt19937_64* rng);

// Causal temporal convolution over axis 1 of [B, T, M, C_in] with weight
// [k, C_in, C_out]: y[t] = sum_tau x[t - tau] W[tau] + b (x zero before t=0).
Tensor temporal_conv(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Applies op along the node axis (second to last) of [..., M, C].
Tensor propagate(const Tensor& x, const std::shared_ptr<const NodeOperator>& op);

// [B, T, M, C] -> [B, M, C] at time index t.
Tensor time_step(const Tensor& x, std::size_t t);

// Slices [begin, begin + count) of the last axis.
Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t count);

Tensor concat_last(const std::vector<Tensor>& parts);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// sum_i w_i * (lambda * s0 * mean_m |d0| + (1 - lambda) * s1 * mean_m |d1|)
// over prediction/target pairs of shape [B, M, 2], where d = pred - target and
// s0/s1 rescale each channel back to flow units.
Tensor balanced_abs_loss(const Tensor& pred, const Tensor& target, std::span<const float> weights,
                         float lambda, float scale_in, float scale_out);

}  // namespace pgasr::ag
