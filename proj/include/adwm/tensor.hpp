#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adwm/error.hpp"

namespace adwm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string to_string(const Shape& shape);
Index numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // empty until backward reaches the node
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the parents' grads.
  std::function<void(Node& self)> backward;
};

}  // namespace detail

/// Dense row-major tensor of doubles with define-by-run reverse-mode gradients.
///
/// A Tensor is a shared handle: copies alias the same node. Values are fixed
/// once an op produces them; only leaves expose mutable storage (for optimizers
/// and finite-difference probes).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, Eigen::ArrayXd values, bool requires_grad = false);
  static Tensor from(Shape shape, std::initializer_list<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0, bool requires_grad = false);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  Index rank() const { return static_cast<Index>(shape().size()); }
  Index dim(Index i) const;
  Index numel() const { return data().size(); }

  const Eigen::ArrayXd& data() const;
  /// Leaf tensors only.
  Eigen::ArrayXd& mutable_data();
  double item() const;
  double at(std::initializer_list<Index> idx) const;

  /// View of a rank-2 tensor as a row-major matrix.
  Eigen::Map<const RowMatrixXd> matrix() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  const Eigen::ArrayXd& grad() const;
  void zero_grad();
  Tensor detach() const;
  std::string_view op() const;

  /// Populates grads of every requires_grad tensor reachable from this scalar.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Nodes reachable from a loss, in topological order (inputs first).
class Tape {
 public:
  static Tape record(const Tensor& loss);
  std::size_t size() const { return nodes_.size(); }
  std::span<detail::Node* const> nodes() const { return nodes_; }
  void run_backward(const Tensor& loss) const;

 private:
  std::vector<detail::Node*> nodes_;
};

/// Disables graph recording on this thread while alive.
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

/// Debug hook: scale the gradient flowing into the named op by 1.1. Empty string disables.
void set_backward_corruption(std::string op_name);

// Arithmetic. Binary ops broadcast a scalar ({1}) against anything, and a
// rank-1 vector of length s[0] against a tensor of shape s (per-channel).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Softmax over the last axis of a rank-1 or rank-2 tensor.
Tensor softmax(const Tensor& v);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over every axis but the first: [C, ...] -> [C].
Tensor spatial_mean(const Tensor& f);

/// Slice along the leading axis. Rank-1 input yields shape {1}.
Tensor select(const Tensor& t, Index i);
/// Join same-shape tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);
/// Join along the existing leading axis.
Tensor concat(std::span<const Tensor> parts);

/// Same-size cross-correlation: x [Cin,H,W], k [Cout,Cin,kh,kw] with odd kh, kw.
Tensor conv2d(const Tensor& x, const Tensor& kernel);

/// Covariance of an m x n observation matrix (rows are samples), symmetrized.
Tensor covariance(const Tensor& x);
/// C_ij / (sqrt(C_ii + eps) sqrt(C_jj + eps)).
Tensor correlation(const Tensor& c, double eps = 1e-8);

/// [C,H,W] -> [C,H*f,W*f], half-pixel centers, edge-clamped.
Tensor upsample_bilinear(const Tensor& x, Index factor = 4);
Tensor upsample_nearest(const Tensor& x, Index factor = 4);

Tensor chw_to_hwc(const Tensor& x);
Tensor hwc_to_chw(const Tensor& x);

/// Finite-difference check of fn's gradient with respect to each leaf in `inputs`.
/// Returns max over coordinates of |a - n| / max(1, |a|, |n|).
double gradcheck(const std::function<Tensor()>& fn, std::span<const Tensor> inputs, double eps = 1e-5);
double gradcheck(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double eps = 1e-5);

}  // namespace adwm
