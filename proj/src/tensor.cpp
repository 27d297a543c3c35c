#include "adwm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "adwm/linalg.hpp"

namespace adwm {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowArrayXXd = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

thread_local bool g_grad_enabled = true;
std::string g_corrupt_op;

void accumulate(Node& target, const Eigen::ArrayXd& g) {
  if (!target.requires_grad) return;
  if (target.grad.size() == 0) {
    target.grad = g;
  } else {
    target.grad += g;
  }
}

Tensor make_leaf(Shape shape, Eigen::ArrayXd values, bool requires_grad) {
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + to_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw DimensionError("shape " + to_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor make_result(Shape shape, Eigen::ArrayXd value, std::string_view op,
                   std::vector<NodePtr> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool needs = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                   [](const NodePtr& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* what) {
  if (!t.defined()) throw UsageError(std::string(what) + ": undefined tensor");
}

// Broadcasting between a and b. Only scalar and leading-axis vector broadcasts exist.
enum class Bcast { same, scalar, lead };

Bcast classify(const Shape& full, const Shape& part) {
  if (full == part) return Bcast::same;
  if (numel(part) == 1) return Bcast::scalar;
  if (part.size() == 1 && full.size() >= 2 && part[0] == full[0]) return Bcast::lead;
  return Bcast::same;  // caller validates
}

bool compatible(const Shape& full, const Shape& part) {
  if (full == part || numel(part) == 1) return true;
  return part.size() == 1 && full.size() >= 2 && part[0] == full[0];
}

Eigen::ArrayXd expand(const Eigen::ArrayXd& v, const Shape& from, const Shape& to) {
  switch (classify(to, from)) {
    case Bcast::same:
      return v;
    case Bcast::scalar:
      return Eigen::ArrayXd::Constant(numel(to), v(0));
    case Bcast::lead: {
      const Index lead = to[0];
      const Index rest = numel(to) / lead;
      Eigen::ArrayXd out(numel(to));
      Eigen::Map<RowArrayXXd>(out.data(), lead, rest) = v.replicate(1, rest);
      return out;
    }
  }
  return v;
}

Eigen::ArrayXd reduce(const Eigen::ArrayXd& g, const Shape& full, const Shape& part) {
  switch (classify(full, part)) {
    case Bcast::same:
      return g;
    case Bcast::scalar:
      return Eigen::ArrayXd::Constant(1, g.sum());
    case Bcast::lead: {
      const Index lead = full[0];
      const Index rest = numel(full) / lead;
      return Eigen::Map<const RowArrayXXd>(g.data(), lead, rest).rowwise().sum();
    }
  }
  return g;
}

template <typename Fwd, typename Bwd>
Tensor binary(const Tensor& a, const Tensor& b, std::string_view op, Fwd fwd, Bwd bwd) {
  require_defined(a, "binary op");
  require_defined(b, "binary op");
  Shape out_shape;
  if (compatible(a.shape(), b.shape())) {
    out_shape = a.shape();
  } else if (compatible(b.shape(), a.shape())) {
    out_shape = b.shape();
  } else {
    throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(a.shape()) + " with " +
                         to_string(b.shape()));
  }
  Eigen::ArrayXd ea = expand(a.data(), a.shape(), out_shape);
  Eigen::ArrayXd eb = expand(b.data(), b.shape(), out_shape);
  Eigen::ArrayXd value = fwd(ea, eb);
  const bool record = a.requires_grad() || b.requires_grad();
  return make_result(
      out_shape, std::move(value), op, {a.node(), b.node()},
      [ea = record ? std::move(ea) : Eigen::ArrayXd(), eb = record ? std::move(eb) : Eigen::ArrayXd(),
       out_shape, bwd](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        Eigen::ArrayXd ga, gb;
        bwd(self.grad, ea, eb, ga, gb);
        if (pa.requires_grad) accumulate(pa, reduce(ga, out_shape, pa.shape));
        if (pb.requires_grad) accumulate(pb, reduce(gb, out_shape, pb.shape));
      });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, std::string_view op, Fwd fwd, Deriv deriv) {
  require_defined(x, "unary op");
  Eigen::ArrayXd value = fwd(x.data());
  return make_result(x.shape(), value, op, {x.node()},
                     [deriv](Node& self) {
                       Node& p = *self.parents[0];
                       accumulate(p, self.grad * deriv(p.value, self.value));
                     });
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const Index n = adwm::numel(shape);
  return make_leaf(std::move(shape), Eigen::ArrayXd::Zero(n), requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const Index n = adwm::numel(shape);
  return make_leaf(std::move(shape), Eigen::ArrayXd::Constant(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, Eigen::ArrayXd values, bool requires_grad) {
  return make_leaf(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, bool requires_grad) {
  Eigen::ArrayXd v(static_cast<Index>(values.size()));
  std::copy(values.begin(), values.end(), v.data());
  return make_leaf(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::ArrayXd v(adwm::numel(shape));
  for (Index i = 0; i < v.size(); ++i) v(i) = dist(rng);
  return make_leaf(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Eigen::ArrayXd v(adwm::numel(shape));
  for (Index i = 0; i < v.size(); ++i) v(i) = dist(rng);
  return make_leaf(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

Index Tensor::dim(Index i) const {
  const Shape& s = shape();
  if (i < 0 || i >= static_cast<Index>(s.size())) throw DimensionError("axis out of range");
  return s[static_cast<std::size_t>(i)];
}

const Eigen::ArrayXd& Tensor::data() const {
  require_defined(*this, "data");
  return node_->value;
}

Eigen::ArrayXd& Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  if (!is_leaf()) throw UsageError("only leaf tensors are mutable");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
  return data()(0);
}

double Tensor::at(std::initializer_list<Index> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) throw DimensionError("index rank mismatch for " + to_string(s));
  Index flat = 0;
  std::size_t k = 0;
  for (Index i : idx) {
    if (i < 0 || i >= s[k]) throw DimensionError("index out of range for " + to_string(s));
    flat = flat * s[k] + i;
    ++k;
  }
  return data()(flat);
}

Eigen::Map<const RowMatrixXd> Tensor::matrix() const {
  if (rank() != 2) throw DimensionError("matrix view of " + to_string(shape()));
  return {data().data(), shape()[0], shape()[1]};
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }
bool Tensor::is_leaf() const { return defined() && node_->op == "leaf"; }
bool Tensor::has_grad() const { return requires_grad() && node_->grad.size() == numel(); }

const Eigen::ArrayXd& Tensor::grad() const {
  if (!has_grad()) throw UsageError("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (requires_grad()) node_->grad = Eigen::ArrayXd::Zero(numel());
}

Tensor Tensor::detach() const { return make_leaf(shape(), data(), false); }

std::string_view Tensor::op() const { return defined() ? node_->op : std::string_view{}; }

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (numel() != 1) throw UsageError("backward() needs a scalar loss, got " + to_string(shape()));
  if (!requires_grad()) throw UsageError("backward() on a tensor that is not on the tape");
  Tape::record(*this).run_backward(*this);
}

// ---------------------------------------------------------------- Tape

Tape Tape::record(const Tensor& loss) {
  Tape tape;
  std::unordered_set<const Node*> seen;
  // Iterative post-order DFS so deep graphs do not exhaust the stack.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::run_backward(const Tensor& loss) const {
  Node& root = *loss.node();
  if (root.grad.size() == 0) root.grad = Eigen::ArrayXd::Zero(1);
  root.grad(0) += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = **it;
    if (!node.backward || node.grad.size() == 0) continue;
    if (!g_corrupt_op.empty() && node.op == g_corrupt_op) {
      Eigen::ArrayXd saved = node.grad;
      node.grad *= 1.1;
      node.backward(node);
      node.grad = std::move(saved);
    } else {
      node.backward(node);
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void set_backward_corruption(std::string op_name) { g_corrupt_op = std::move(op_name); }

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](const auto& x, const auto& y) -> Eigen::ArrayXd { return x + y; },
      [](const Eigen::ArrayXd& g, const auto&, const auto&, Eigen::ArrayXd& ga, Eigen::ArrayXd& gb) {
        ga = g;
        gb = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](const auto& x, const auto& y) -> Eigen::ArrayXd { return x - y; },
      [](const Eigen::ArrayXd& g, const auto&, const auto&, Eigen::ArrayXd& ga, Eigen::ArrayXd& gb) {
        ga = g;
        gb = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](const auto& x, const auto& y) -> Eigen::ArrayXd { return x * y; },
      [](const Eigen::ArrayXd& g, const Eigen::ArrayXd& x, const Eigen::ArrayXd& y, Eigen::ArrayXd& ga,
         Eigen::ArrayXd& gb) {
        ga = g * y;
        gb = g * x;
      });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x * factor; },
      [factor](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) -> Eigen::ArrayXd {
        return Eigen::ArrayXd::Constant(x.size(), factor);
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](const Eigen::ArrayXd& v) -> Eigen::ArrayXd { return v.max(0.0); },
      [](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) -> Eigen::ArrayXd {
        return (v > 0.0).cast<double>();
      });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, "leaky_relu",
      [slope](const Eigen::ArrayXd& v) -> Eigen::ArrayXd { return (v > 0.0).select(v, v * slope); },
      [slope](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) -> Eigen::ArrayXd {
        return (v > 0.0).select(Eigen::ArrayXd::Ones(v.size()), slope);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](const Eigen::ArrayXd& v) -> Eigen::ArrayXd {
        // Split by sign so exp never overflows.
        return (v >= 0.0).select(1.0 / (1.0 + (-v).exp()), v.exp() / (1.0 + v.exp()));
      },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) -> Eigen::ArrayXd { return y * (1.0 - y); });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](const Eigen::ArrayXd& v) -> Eigen::ArrayXd { return v.abs(); },
      [](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) -> Eigen::ArrayXd {
        return (v > 0.0).cast<double>() - (v < 0.0).cast<double>();
      });
}

// ---------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const Index m = a.dim(0), n = b.dim(1);
  Eigen::ArrayXd value(m * n);
  Eigen::Map<RowMatrixXd>(value.data(), m, n).noalias() = a.matrix() * b.matrix();
  return make_result({m, n}, std::move(value), "matmul", {a.node(), b.node()}, [m, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const Index k = pa.shape[1];
    Eigen::Map<const RowMatrixXd> g(self.grad.data(), m, n);
    if (pa.requires_grad) {
      Eigen::ArrayXd ga(m * k);
      Eigen::Map<RowMatrixXd>(ga.data(), m, k).noalias() =
          g * Eigen::Map<const RowMatrixXd>(pb.value.data(), k, n).transpose();
      accumulate(pa, ga);
    }
    if (pb.requires_grad) {
      Eigen::ArrayXd gb(k * n);
      Eigen::Map<RowMatrixXd>(gb.data(), k, n).noalias() =
          Eigen::Map<const RowMatrixXd>(pa.value.data(), m, k).transpose() * g;
      accumulate(pb, gb);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  if (a.rank() != 2) throw DimensionError("transpose expects rank 2, got " + to_string(a.shape()));
  const Index r = a.dim(0), c = a.dim(1);
  Eigen::ArrayXd value(r * c);
  Eigen::Map<RowMatrixXd>(value.data(), c, r) = a.matrix().transpose();
  return make_result({c, r}, std::move(value), "transpose", {a.node()}, [r, c](Node& self) {
    Eigen::ArrayXd g(r * c);
    Eigen::Map<RowMatrixXd>(g.data(), r, c) =
        Eigen::Map<const RowMatrixXd>(self.grad.data(), c, r).transpose();
    accumulate(*self.parents[0], g);
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (numel(shape) != a.numel()) {
    throw DimensionError("reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  for (Index d : shape)
    if (d <= 0) throw DimensionError("reshape to non-positive dimension " + to_string(shape));
  return make_result(std::move(shape), a.data(), "reshape", {a.node()},
                     [](Node& self) { accumulate(*self.parents[0], self.grad); });
}

Tensor softmax(const Tensor& v) {
  require_defined(v, "softmax");
  if (v.numel() == 0) throw DimensionError("softmax of empty tensor");
  if (v.rank() != 1 && v.rank() != 2) {
    throw DimensionError("softmax expects rank 1 or 2, got " + to_string(v.shape()));
  }
  const Index rows = v.rank() == 1 ? 1 : v.dim(0);
  const Index cols = v.rank() == 1 ? v.dim(0) : v.dim(1);
  Eigen::ArrayXd value(v.numel());
  Eigen::Map<const RowArrayXXd> in(v.data().data(), rows, cols);
  Eigen::Map<RowArrayXXd> out(value.data(), rows, cols);
  for (Index r = 0; r < rows; ++r) {
    out.row(r) = (in.row(r) - in.row(r).maxCoeff()).exp();
    out.row(r) /= out.row(r).sum();
  }
  return make_result(v.shape(), std::move(value), "softmax", {v.node()}, [rows, cols](Node& self) {
    Eigen::Map<const RowArrayXXd> y(self.value.data(), rows, cols);
    Eigen::Map<const RowArrayXXd> g(self.grad.data(), rows, cols);
    Eigen::ArrayXd gin(rows * cols);
    Eigen::Map<RowArrayXXd> gi(gin.data(), rows, cols);
    for (Index r = 0; r < rows; ++r) {
      const double dot = (g.row(r) * y.row(r)).sum();
      gi.row(r) = y.row(r) * (g.row(r) - dot);
    }
    accumulate(*self.parents[0], gin);
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  return make_result({1}, Eigen::ArrayXd::Constant(1, x.data().sum()), "sum", {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    accumulate(p, Eigen::ArrayXd::Constant(p.value.size(), self.grad(0)));
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  const double count = static_cast<double>(x.numel());
  return make_result({1}, Eigen::ArrayXd::Constant(1, x.data().sum() / count), "mean", {x.node()},
                     [count](Node& self) {
                       Node& p = *self.parents[0];
                       accumulate(p, Eigen::ArrayXd::Constant(p.value.size(), self.grad(0) / count));
                     });
}

Tensor spatial_mean(const Tensor& f) {
  require_defined(f, "spatial_mean");
  if (f.rank() < 2) throw DimensionError("spatial_mean expects rank >= 2, got " + to_string(f.shape()));
  const Index lead = f.dim(0);
  const Index rest = f.numel() / lead;
  Eigen::ArrayXd value = Eigen::Map<const RowArrayXXd>(f.data().data(), lead, rest).rowwise().sum() /
                         static_cast<double>(rest);
  return make_result({lead}, std::move(value), "spatial_mean", {f.node()}, [lead, rest](Node& self) {
    Eigen::ArrayXd g(lead * rest);
    Eigen::Map<RowArrayXXd>(g.data(), lead, rest) =
        (self.grad / static_cast<double>(rest)).replicate(1, rest);
    accumulate(*self.parents[0], g);
  });
}

Tensor select(const Tensor& t, Index i) {
  require_defined(t, "select");
  const Index lead = t.dim(0);
  if (i < 0 || i >= lead) {
    throw DimensionError("select index " + std::to_string(i) + " out of range for " + to_string(t.shape()));
  }
  Shape shape(t.shape().begin() + 1, t.shape().end());
  if (shape.empty()) shape = {1};
  const Index block = t.numel() / lead;
  return make_result(shape, t.data().segment(i * block, block), "select", {t.node()},
                     [i, block](Node& self) {
                       Node& p = *self.parents[0];
                       Eigen::ArrayXd g = Eigen::ArrayXd::Zero(p.value.size());
                       g.segment(i * block, block) = self.grad;
                       accumulate(p, g);
                     });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack of zero tensors");
  const Shape& inner = parts[0].shape();
  const Index block = numel(inner);
  std::vector<NodePtr> parents;
  Eigen::ArrayXd value(block * static_cast<Index>(parts.size()));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (parts[k].shape() != inner) {
      throw DimensionError("stack: shape " + to_string(parts[k].shape()) + " differs from " +
                           to_string(inner));
    }
    value.segment(static_cast<Index>(k) * block, block) = parts[k].data();
    parents.push_back(parts[k].node());
  }
  Shape shape{static_cast<Index>(parts.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return make_result(std::move(shape), std::move(value), "stack", std::move(parents), [block](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      accumulate(*self.parents[k], self.grad.segment(static_cast<Index>(k) * block, block));
    }
  });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  Index lead = 0;
  std::vector<NodePtr> parents;
  std::vector<Index> offsets;
  for (const Tensor& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw DimensionError("concat: trailing shape mismatch " + to_string(p.shape()) + " vs " +
                           to_string(parts[0].shape()));
    }
    lead += p.dim(0);
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Eigen::ArrayXd value(numel(shape));
  Index offset = 0;
  for (const Tensor& p : parts) {
    value.segment(offset, p.numel()) = p.data();
    offsets.push_back(offset);
    offset += p.numel();
    parents.push_back(p.node());
  }
  return make_result(std::move(shape), std::move(value), "concat", std::move(parents),
                     [offsets](Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         Node& p = *self.parents[k];
                         accumulate(p, self.grad.segment(offsets[k], p.value.size()));
                       }
                     });
}

// ---------------------------------------------------------------- convolution

namespace {

// Same-size convolution as kh*kw shifted GEMMs over a zero-padded copy of the
// input. Output rows are computed at the padded width Wp; the trailing
// kw - 1 columns of each row are junk and get cropped.
struct ConvGeometry {
  Index cin, cout, h, w, kh, kw;
  Index wp() const { return w + kw - 1; }
  Index hp() const { return h + kh - 1; }
  Index plane() const { return hp() * wp(); }
  Index span() const { return h * wp(); }
  // Slack so the last channel's shifted reads stay inside the buffer.
  Index padded_size() const { return cin * plane() + kw; }
};

using StridedMap = Eigen::Map<const RowMatrixXd, 0, Eigen::OuterStride<>>;
using StridedMutMap = Eigen::Map<RowMatrixXd, 0, Eigen::OuterStride<>>;

Eigen::ArrayXd pad_input(const double* x, const ConvGeometry& g) {
  Eigen::ArrayXd xp = Eigen::ArrayXd::Zero(g.padded_size());
  const Index ph = g.kh / 2, pw = g.kw / 2;
  for (Index c = 0; c < g.cin; ++c)
    for (Index y = 0; y < g.h; ++y)
      std::copy_n(x + (c * g.h + y) * g.w, g.w, xp.data() + c * g.plane() + (y + ph) * g.wp() + pw);
  return xp;
}

// [Cout,Cin,kh,kw] -> [Cout, (ky,kx,Cin)] so each tap is a contiguous Cout x Cin block.
RowMatrixXd pack_kernel(const double* k, const ConvGeometry& g) {
  RowMatrixXd packed(g.cout, g.kh * g.kw * g.cin);
  for (Index o = 0; o < g.cout; ++o)
    for (Index i = 0; i < g.cin; ++i)
      for (Index t = 0; t < g.kh * g.kw; ++t) packed(o, t * g.cin + i) = k[(o * g.cin + i) * g.kh * g.kw + t];
  return packed;
}

Index tap_offset(const ConvGeometry& g, Index t) { return (t / g.kw) * g.wp() + t % g.kw; }

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel) {
  require_defined(x, "conv2d");
  require_defined(kernel, "conv2d");
  if (x.rank() != 3 || kernel.rank() != 4) {
    throw DimensionError("conv2d expects x [C,H,W] and kernel [Cout,Cin,kh,kw], got " + to_string(x.shape()) +
                         " and " + to_string(kernel.shape()));
  }
  if (kernel.dim(1) != x.dim(0)) {
    throw DimensionError("conv2d channel mismatch: input " + to_string(x.shape()) + ", kernel " +
                         to_string(kernel.shape()));
  }
  if (kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0) {
    throw DimensionError("conv2d kernel spatial size must be odd, got " + to_string(kernel.shape()));
  }
  const ConvGeometry geo{x.dim(0), kernel.dim(0), x.dim(1), x.dim(2), kernel.dim(2), kernel.dim(3)};
  const Index taps = geo.kh * geo.kw;
  Eigen::ArrayXd xp = pad_input(x.data().data(), geo);
  const RowMatrixXd packed = pack_kernel(kernel.data().data(), geo);
  RowMatrixXd wide = RowMatrixXd::Zero(geo.cout, geo.span());
  for (Index t = 0; t < taps; ++t) {
    StridedMap in(xp.data() + tap_offset(geo, t), geo.cin, geo.span(), Eigen::OuterStride<>(geo.plane()));
    wide.noalias() += packed.middleCols(t * geo.cin, geo.cin) * in;
  }
  Eigen::ArrayXd value(geo.cout * geo.h * geo.w);
  for (Index o = 0; o < geo.cout; ++o)
    for (Index y = 0; y < geo.h; ++y)
      std::copy_n(wide.data() + o * geo.span() + y * geo.wp(), geo.w, value.data() + (o * geo.h + y) * geo.w);
  const bool record = x.requires_grad() || kernel.requires_grad();
  return make_result({geo.cout, geo.h, geo.w}, std::move(value), "conv2d", {x.node(), kernel.node()},
                     [geo, taps, xp = record ? std::move(xp) : Eigen::ArrayXd()](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pk = *self.parents[1];
                       // Gradient at the padded width, junk columns zero.
                       RowMatrixXd g = RowMatrixXd::Zero(geo.cout, geo.span());
                       for (Index o = 0; o < geo.cout; ++o)
                         for (Index y = 0; y < geo.h; ++y)
                           std::copy_n(self.grad.data() + (o * geo.h + y) * geo.w, geo.w,
                                       g.data() + o * geo.span() + y * geo.wp());
                       if (pk.requires_grad) {
                         RowMatrixXd gp(geo.cout, taps * geo.cin);
                         for (Index t = 0; t < taps; ++t) {
                           StridedMap in(xp.data() + tap_offset(geo, t), geo.cin, geo.span(),
                                         Eigen::OuterStride<>(geo.plane()));
                           gp.middleCols(t * geo.cin, geo.cin).noalias() = g * in.transpose();
                         }
                         Eigen::ArrayXd gk(geo.cout * geo.cin * taps);
                         for (Index o = 0; o < geo.cout; ++o)
                           for (Index i = 0; i < geo.cin; ++i)
                             for (Index t = 0; t < taps; ++t) gk((o * geo.cin + i) * taps + t) = gp(o, t * geo.cin + i);
                         accumulate(pk, gk);
                       }
                       if (px.requires_grad) {
                         const RowMatrixXd packed = pack_kernel(pk.value.data(), geo);
                         Eigen::ArrayXd gxp = Eigen::ArrayXd::Zero(geo.padded_size());
                         for (Index t = 0; t < taps; ++t) {
                           StridedMutMap out(gxp.data() + tap_offset(geo, t), geo.cin, geo.span(),
                                             Eigen::OuterStride<>(geo.plane()));
                           out.noalias() += packed.middleCols(t * geo.cin, geo.cin).transpose() * g;
                         }
                         const Index ph = geo.kh / 2, pw = geo.kw / 2;
                         Eigen::ArrayXd gx(geo.cin * geo.h * geo.w);
                         for (Index c = 0; c < geo.cin; ++c)
                           for (Index y = 0; y < geo.h; ++y)
                             std::copy_n(gxp.data() + c * geo.plane() + (y + ph) * geo.wp() + pw, geo.w,
                                         gx.data() + (c * geo.h + y) * geo.w);
                         accumulate(px, gx);
                       }
                     });
}

// ---------------------------------------------------------------- covariance

Tensor covariance(const Tensor& x) {
  require_defined(x, "covariance");
  if (x.rank() != 2) throw DimensionError("covariance expects an m x n matrix, got " + to_string(x.shape()));
  const Index m = x.dim(0), n = x.dim(1);
  linalg::Matrix<double> c = linalg::covariance(x.matrix());
  Eigen::ArrayXd value(n * n);
  Eigen::Map<RowMatrixXd>(value.data(), n, n) = c;
  return make_result({n, n}, std::move(value), "covariance", {x.node()}, [m, n](Node& self) {
    Node& p = *self.parents[0];
    Eigen::Map<const RowMatrixXd> xin(p.value.data(), m, n);
    const Eigen::RowVectorXd mu = xin.colwise().mean();
    const RowMatrixXd centered = xin.rowwise() - mu;
    Eigen::Map<const RowMatrixXd> g(self.grad.data(), n, n);
    const RowMatrixXd gs = g + g.transpose();
    Eigen::ArrayXd gx(m * n);
    Eigen::Map<RowMatrixXd>(gx.data(), m, n).noalias() = centered * gs / static_cast<double>(m - 1);
    accumulate(p, gx);
  });
}

Tensor correlation(const Tensor& c, double eps) {
  require_defined(c, "correlation");
  if (c.rank() != 2 || c.dim(0) != c.dim(1)) {
    throw DimensionError("correlation expects a square matrix, got " + to_string(c.shape()));
  }
  const Index n = c.dim(0);
  linalg::Matrix<double> r = linalg::correlation(c.matrix(), eps);
  Eigen::ArrayXd value(n * n);
  Eigen::Map<RowMatrixXd>(value.data(), n, n) = r;
  return make_result({n, n}, std::move(value), "correlation", {c.node()}, [n, eps](Node& self) {
    Node& p = *self.parents[0];
    Eigen::Map<const RowMatrixXd> cin(p.value.data(), n, n);
    Eigen::Map<const RowMatrixXd> g(self.grad.data(), n, n);
    const Eigen::VectorXd s = (cin.diagonal().array() + eps).rsqrt().matrix();
    Eigen::ArrayXd gc(n * n);
    Eigen::Map<RowMatrixXd> gm(gc.data(), n, n);
    gm = s.asDiagonal() * g * s.asDiagonal();
    // Diagonal entries also enter through the scale factors s_k = (C_kk + eps)^-1/2.
    const RowMatrixXd gcs = g.cwiseProduct(cin);
    for (Index k = 0; k < n; ++k) {
      const double ds = gcs.row(k).dot(s) + gcs.col(k).dot(s);
      gm(k, k) += -0.5 * s(k) * s(k) * s(k) * ds;
    }
    accumulate(p, gc);
  });
}

// ---------------------------------------------------------------- resampling

namespace {

struct Interp {
  std::vector<Index> lo, hi;
  std::vector<double> w;
};

Interp bilinear_axis(Index n, Index factor) {
  Interp t;
  const Index out = n * factor;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.w.resize(static_cast<std::size_t>(out));
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::max(src, 0.0);
    Index i0 = std::min(static_cast<Index>(std::floor(src)), n - 1);
    Index i1 = std::min(i0 + 1, n - 1);
    const auto k = static_cast<std::size_t>(i);
    t.lo[k] = i0;
    t.hi[k] = i1;
    t.w[k] = i0 == i1 ? 0.0 : src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, Index factor) {
  require_defined(x, "upsample_bilinear");
  if (x.rank() != 3) throw DimensionError("upsample expects [C,H,W], got " + to_string(x.shape()));
  if (factor < 1) throw ConfigError("upsample factor must be >= 1");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index oh = h * factor, ow = w * factor;
  auto ty = std::make_shared<Interp>(bilinear_axis(h, factor));
  auto tx = std::make_shared<Interp>(bilinear_axis(w, factor));
  Eigen::ArrayXd value(c * oh * ow);
  const double* in = x.data().data();
  for (Index ch = 0; ch < c; ++ch) {
    const double* src = in + ch * h * w;
    for (Index y = 0; y < oh; ++y) {
      const auto ky = static_cast<std::size_t>(y);
      const double wy = ty->w[ky];
      const double* r0 = src + ty->lo[ky] * w;
      const double* r1 = src + ty->hi[ky] * w;
      for (Index xx = 0; xx < ow; ++xx) {
        const auto kx = static_cast<std::size_t>(xx);
        const double wx = tx->w[kx];
        const Index x0 = tx->lo[kx], x1 = tx->hi[kx];
        const double top = r0[x0] * (1.0 - wx) + r0[x1] * wx;
        const double bot = r1[x0] * (1.0 - wx) + r1[x1] * wx;
        value((ch * oh + y) * ow + xx) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return make_result({c, oh, ow}, std::move(value), "upsample_bilinear", {x.node()},
                     [c, h, w, oh, ow, ty, tx](Node& self) {
                       Eigen::ArrayXd g = Eigen::ArrayXd::Zero(c * h * w);
                       for (Index ch = 0; ch < c; ++ch) {
                         double* dst = g.data() + ch * h * w;
                         for (Index y = 0; y < oh; ++y) {
                           const auto ky = static_cast<std::size_t>(y);
                           const double wy = ty->w[ky];
                           double* r0 = dst + ty->lo[ky] * w;
                           double* r1 = dst + ty->hi[ky] * w;
                           for (Index xx = 0; xx < ow; ++xx) {
                             const auto kx = static_cast<std::size_t>(xx);
                             const double wx = tx->w[kx];
                             const Index x0 = tx->lo[kx], x1 = tx->hi[kx];
                             const double go = self.grad((ch * oh + y) * ow + xx);
                             r0[x0] += go * (1.0 - wy) * (1.0 - wx);
                             r0[x1] += go * (1.0 - wy) * wx;
                             r1[x0] += go * wy * (1.0 - wx);
                             r1[x1] += go * wy * wx;
                           }
                         }
                       }
                       accumulate(*self.parents[0], g);
                     });
}

Tensor upsample_nearest(const Tensor& x, Index factor) {
  require_defined(x, "upsample_nearest");
  if (x.rank() != 3) throw DimensionError("upsample expects [C,H,W], got " + to_string(x.shape()));
  if (factor < 1) throw ConfigError("upsample factor must be >= 1");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index oh = h * factor, ow = w * factor;
  Eigen::ArrayXd value(c * oh * ow);
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx)
        value((ch * oh + y) * ow + xx) = x.data()((ch * h + y / factor) * w + xx / factor);
  return make_result({c, oh, ow}, std::move(value), "upsample_nearest", {x.node()},
                     [c, h, w, oh, ow, factor](Node& self) {
                       Eigen::ArrayXd g = Eigen::ArrayXd::Zero(c * h * w);
                       for (Index ch = 0; ch < c; ++ch)
                         for (Index y = 0; y < oh; ++y)
                           for (Index xx = 0; xx < ow; ++xx)
                             g((ch * h + y / factor) * w + xx / factor) += self.grad((ch * oh + y) * ow + xx);
                       accumulate(*self.parents[0], g);
                     });
}

Tensor chw_to_hwc(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("chw_to_hwc expects rank 3, got " + to_string(x.shape()));
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  return reshape(transpose(reshape(x, {c, h * w})), {h, w, c});
}

Tensor hwc_to_chw(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("hwc_to_chw expects rank 3, got " + to_string(x.shape()));
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  return reshape(transpose(reshape(x, {h * w, c})), {c, h, w});
}

// ---------------------------------------------------------------- gradcheck

double gradcheck(const std::function<Tensor()>& fn, std::span<const Tensor> inputs, double eps) {
  for (const Tensor& t : inputs) {
    if (!t.is_leaf() || !t.requires_grad()) throw UsageError("gradcheck inputs must be requires_grad leaves");
  }
  std::vector<Tensor> leaves(inputs.begin(), inputs.end());
  for (Tensor& t : leaves) t.zero_grad();
  Tensor loss = fn();
  if (loss.numel() != 1) throw UsageError("gradcheck needs a scalar function, got " + to_string(loss.shape()));
  loss.backward();

  double worst = 0.0;
  NoGradGuard no_grad;
  for (Tensor& t : leaves) {
    const Eigen::ArrayXd analytic = t.grad();
    Eigen::ArrayXd& values = t.mutable_data();
    for (Index i = 0; i < values.size(); ++i) {
      const double saved = values(i);
      values(i) = saved + eps;
      const double up = fn().item();
      values(i) = saved - eps;
      const double down = fn().item();
      values(i) = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic(i);
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double gradcheck(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double eps) {
  const Tensor inputs[] = {x};
  return gradcheck([&] { return fn(x); }, inputs, eps);
}

}  // namespace adwm
