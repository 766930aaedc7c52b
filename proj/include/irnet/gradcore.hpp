#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "irnet/error.hpp"

namespace irnet {

/// Dimension list of a dense tensor, row-major. Rank 0 (empty shape) is a
/// scalar of size 1.
using Shape = std::vector<Eigen::Index>;

Eigen::Index shape_size(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  Eigen::ArrayXd values;  // flat, row-major
  Eigen::ArrayXd grad;    // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;  // pulls this node's grad into parents

  Eigen::Index size() const { return values.size(); }
  void ensure_grad();
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

/// Dense 64-bit tensor participating in a reverse-mode differentiation
/// graph. Copying a Tensor copies the handle, not the storage; two copies
/// alias one node. Every operation validates that its result is finite
/// (NonFiniteResult otherwise).
///
/// A tape (the parent links recorded by operations) and the tensors on it
/// are confined to one logical thread; distinct tapes may run in parallel.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_flat(Shape shape, Eigen::ArrayXd values, bool requires_grad = false);
  static Tensor from_vector(const Eigen::VectorXd& v, bool requires_grad = false);
  /// Row-major copy of an Eigen matrix (Eigen's default storage is
  /// column-major, so this reorders).
  static Tensor from_matrix(const Eigen::MatrixXd& m, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Eigen::Index size() const { return node_->size(); }
  Eigen::Index dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }

  const Eigen::ArrayXd& values() const { return node_->values; }
  /// Mutable view of the flat values. Writing through it changes the tensor
  /// in place (used by the optimizer and by finite-difference probes).
  Eigen::ArrayXd& values_mut() { return node_->values; }
  double value() const;  // scalar tensors only
  double operator[](Eigen::Index i) const { return node_->values[i]; }

  Eigen::VectorXd to_vector() const;
  Eigen::MatrixXd to_matrix() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  const Eigen::ArrayXd& grad() const;
  void zero_grad();

  detail::TensorNode* node() const { return node_.get(); }
  const detail::NodePtr& node_ptr() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  detail::NodePtr node_;
};

/// Scoped switch that disables tape recording on the current thread; used
/// for evaluation passes and finite-difference probes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- primitive operations -------------------------------------------------
// Each op returns a fresh tensor and records a tape node when recording is
// enabled and any input is tracked. Shape rules raise ShapeMismatch.

/// [m,k] x [k,n] -> [m,n], or [m,k] x [k] -> [m].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Same shape, or matrix [m,n] + row bias [n] (the only broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Hadamard product, same shape.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Contiguous [begin, end) range along `axis`.
Tensor slice(const Tensor& x, int axis, Eigen::Index begin, Eigen::Index end);
Tensor transpose(const Tensor& x);  // rank 2
Tensor scale(const Tensor& x, double s);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
/// Stable softmax over lanes along `axis` (max subtraction).
Tensor softmax(const Tensor& x, int axis);
/// Valid (no padding) 2-D cross-correlation of a [R,C] input with a [kr,kc]
/// kernel at stride [stride_r, stride_c]; `bias` is an optional scalar added
/// to every output element (pass a default-constructed Tensor for none).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride_r,
              int stride_c);
/// Full reduction to a rank-0 scalar.
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor flatten(const Tensor& x);

/// Reverse-mode sweep from a scalar loss. Gradients of tracked tensors
/// accumulate additively across uses; each tape node is visited exactly once
/// in reverse topological order, and the tape is released afterwards.
/// Errors: NotScalarLoss.
void backward(const Tensor& loss);

/// Central finite-difference comparison of analytic gradients for a
/// deterministic scalar-valued function of `params`. Returns the maximum
/// relative error over all parameter entries, with denominator
/// max(|analytic|, |numeric|, 1e-8).
/// Errors: BadConfig (eps outside [1e-7, 1e-4]), NonDeterministicFunction.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps = 1e-5);

}  // namespace irnet
