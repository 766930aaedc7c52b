#include "irnet/gradcore.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace irnet {

namespace {

using detail::NodePtr;
using detail::TensorNode;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

thread_local bool g_grad_enabled = true;

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

void check(bool cond, Errc code, const std::string& msg) {
  if (!cond) raise(code, msg);
}

void check_finite(const Eigen::ArrayXd& values, const char* op) {
  if (!values.allFinite()) raise(Errc::non_finite_result, std::string(op) + " produced a non-finite value");
}

bool tracked(const NodePtr& n) { return n->requires_grad; }

/// Decomposes a shape around `axis` into [outer, n, inner] so that element
/// (o, j, i) of the lane view lives at flat index (o*n + j)*inner + i.
struct Lanes {
  Eigen::Index outer;
  Eigen::Index n;
  Eigen::Index inner;
};

Lanes lanes_for(const Shape& s, int axis) {
  check(axis >= 0 && axis < static_cast<int>(s.size()), Errc::shape_mismatch,
        "axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  Lanes l{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) l.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

/// Builds the output tensor for an op and, when recording is on and any
/// input is tracked, attaches the tape node. `fn` must pull grads from the
/// finished output node into the tracked parents.
Tensor make_result(Shape shape, Eigen::ArrayXd values, const char* op,
                   std::vector<NodePtr> inputs, std::function<void()> (*bind)(TensorNode*, const std::vector<NodePtr>&)) {
  check_finite(values, op);
  Tensor out = Tensor::from_flat(std::move(shape), std::move(values));
  bool any_tracked = false;
  for (const auto& p : inputs)
    if (tracked(p)) any_tracked = true;
  if (g_grad_enabled && any_tracked) {
    TensorNode* node = out.node();
    node->requires_grad = true;
    for (auto& p : inputs)
      if (tracked(p)) node->parents.push_back(p);
    node->backward_fn = bind(node, inputs);
  }
  return out;
}

}  // namespace

Eigen::Index shape_size(const Shape& shape) {
  Eigen::Index n = 1;
  for (Eigen::Index d : shape) n *= d;
  return n;
}

void TensorNode::ensure_grad() {
  if (grad.size() != values.size()) grad = Eigen::ArrayXd::Zero(values.size());
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_flat(std::move(shape), Eigen::ArrayXd(), requires_grad);
}

Tensor Tensor::constant(Shape shape, double value) {
  Eigen::ArrayXd v = Eigen::ArrayXd::Constant(shape_size(shape), value);
  return from_flat(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double value) { return constant(Shape{}, value); }

Tensor Tensor::from_flat(Shape shape, Eigen::ArrayXd values, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  Eigen::Index n = shape_size(shape);
  check(n >= 0, Errc::shape_mismatch, "negative dimension in shape " + shape_str(shape));
  if (values.size() == 0 && n != 0) values = Eigen::ArrayXd::Zero(n);
  check(values.size() == n, Errc::shape_mismatch,
        "flat data of size " + std::to_string(values.size()) + " does not fill shape " + shape_str(shape));
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  check_finite(node->values, "tensor construction");
  return Tensor(std::move(node));
}

Tensor Tensor::from_vector(const Eigen::VectorXd& v, bool requires_grad) {
  return from_flat(Shape{v.size()}, v.array(), requires_grad);
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m, bool requires_grad) {
  Eigen::ArrayXd flat(m.size());
  Eigen::Map<RowMat>(flat.data(), m.rows(), m.cols()) = m;
  return from_flat(Shape{m.rows(), m.cols()}, std::move(flat), requires_grad);
}

double Tensor::value() const {
  check(node_ && node_->size() == 1, Errc::shape_mismatch, "value() requires a single-element tensor");
  return node_->values[0];
}

Eigen::VectorXd Tensor::to_vector() const {
  check(rank() <= 1, Errc::shape_mismatch, "to_vector() requires rank <= 1, got " + shape_str(shape()));
  return node_->values.matrix();
}

Eigen::MatrixXd Tensor::to_matrix() const {
  check(rank() == 2, Errc::shape_mismatch, "to_matrix() requires rank 2, got " + shape_str(shape()));
  return Eigen::Map<const RowMat>(node_->values.data(), dim(0), dim(1));
}

const Eigen::ArrayXd& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->grad.size() > 0) node_->grad.setZero();
}

// ---- grad mode ------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2, Errc::shape_mismatch, "matmul lhs must be rank 2, got " + shape_str(a.shape()));
  check(b.rank() == 1 || b.rank() == 2, Errc::shape_mismatch,
        "matmul rhs must be rank 1 or 2, got " + shape_str(b.shape()));
  const Eigen::Index m = a.dim(0), k = a.dim(1);
  const Eigen::Index n = b.rank() == 2 ? b.dim(1) : 1;
  check(b.dim(0) == k, Errc::shape_mismatch,
        "matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));

  Eigen::ArrayXd out(m * n);
  Eigen::Map<RowMat>(out.data(), m, n).noalias() =
      Eigen::Map<const RowMat>(a.values().data(), m, k) * Eigen::Map<const RowMat>(b.values().data(), k, n);
  Shape out_shape = b.rank() == 2 ? Shape{m, n} : Shape{m};

  return make_result(std::move(out_shape), std::move(out), "matmul", {a.node_ptr(), b.node_ptr()},
                     +[](TensorNode* node, const std::vector<NodePtr>& in) -> std::function<void()> {
                       return [node, pa = in[0], pb = in[1]] {
                         const Eigen::Index m2 = pa->shape[0], k2 = pa->shape[1];
                         const Eigen::Index n2 = pb->shape.size() == 2 ? pb->shape[1] : 1;
                         Eigen::Map<const RowMat> go(node->grad.data(), m2, n2);
                         if (tracked(pa)) {
                           pa->ensure_grad();
                           Eigen::Map<RowMat> ga(pa->grad.data(), m2, k2);
                           ga.noalias() += go * Eigen::Map<const RowMat>(pb->values.data(), k2, n2).transpose();
                         }
                         if (tracked(pb)) {
                           pb->ensure_grad();
                           Eigen::Map<RowMat> gb(pb->grad.data(), k2, n2);
                           gb.noalias() += Eigen::Map<const RowMat>(pa->values.data(), m2, k2).transpose() * go;
                         }
                       };
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool bias = a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1);
  check(same || bias, Errc::shape_mismatch,
        "add requires equal shapes or [m,n] + [n], got " + shape_str(a.shape()) + " + " + shape_str(b.shape()));

  Eigen::ArrayXd out;
  if (same) {
    out = a.values() + b.values();
  } else {
    out = a.values();
    Eigen::Map<RowMat> o(out.data(), a.dim(0), a.dim(1));
    o.rowwise() += b.values().matrix().transpose();
  }

  return make_result(a.shape(), std::move(out), "add", {a.node_ptr(), b.node_ptr()},
                     +[](TensorNode* node, const std::vector<NodePtr>& in) -> std::function<void()> {
                       return [node, pa = in[0], pb = in[1]] {
                         if (tracked(pa)) {
                           pa->ensure_grad();
                           pa->grad += node->grad;
                         }
                         if (tracked(pb)) {
                           pb->ensure_grad();
                           if (pb->values.size() == node->values.size()) {
                             pb->grad += node->grad;
                           } else {
                             const Eigen::Index rows = pa->shape[0], cols = pa->shape[1];
                             Eigen::Map<const RowMat> go(node->grad.data(), rows, cols);
                             pb->grad.matrix() += go.colwise().sum().transpose();
                           }
                         }
                       };
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), Errc::shape_mismatch,
        "mul requires equal shapes, got " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  Eigen::ArrayXd out = a.values() * b.values();
  return make_result(a.shape(), std::move(out), "mul", {a.node_ptr(), b.node_ptr()},
                     +[](TensorNode* node, const std::vector<NodePtr>& in) -> std::function<void()> {
                       return [node, pa = in[0], pb = in[1]] {
                         if (tracked(pa)) {
                           pa->ensure_grad();
                           pa->grad += node->grad * pb->values;
                         }
                         if (tracked(pb)) {
                           pb->ensure_grad();
                           pb->grad += node->grad * pa->values;
                         }
                       };
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  check(!parts.empty(), Errc::shape_mismatch, "concat of zero tensors");
  const Shape& first = parts.front().shape();
  Shape out_shape = first;
  check(axis >= 0 && axis < static_cast<int>(first.size()), Errc::shape_mismatch,
        "concat axis " + std::to_string(axis) + " out of range for shape " + shape_str(first));
  Eigen::Index axis_total = 0;
  for (const Tensor& p : parts) {
    check(p.rank() == static_cast<int>(first.size()), Errc::shape_mismatch, "concat rank disagreement");
    for (int i = 0; i < p.rank(); ++i)
      check(i == axis || p.dim(i) == first[static_cast<std::size_t>(i)], Errc::shape_mismatch,
            "concat dimension disagreement off the concat axis");
    axis_total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = axis_total;

  Lanes out_l = lanes_for(out_shape, axis);
  Eigen::ArrayXd out(shape_size(out_shape));
  Eigen::Index offset = 0;  // position along the concat axis
  for (const Tensor& p : parts) {
    const Eigen::Index pn = p.dim(axis);
    const Eigen::Index chunk = pn * out_l.inner;
    for (Eigen::Index o = 0; o < out_l.outer; ++o)
      out.segment((o * out_l.n + offset) * out_l.inner, chunk) = p.values().segment(o * chunk, chunk);
    offset += pn;
  }

  std::vector<NodePtr> inputs;
  inputs.reserve(parts.size());
  for (const Tensor& p : parts) inputs.push_back(p.node_ptr());

  // The lambda re-derives each part's span from the stored shapes, so only
  // the axis needs capturing.
  const int ax = axis;
  Tensor out_t = Tensor::from_flat(std::move(out_shape), std::move(out));
  check_finite(out_t.values(), "concat");
  bool any_tracked = false;
  for (const auto& p : inputs)
    if (p->requires_grad) any_tracked = true;
  if (grad_enabled() && any_tracked) {
    TensorNode* node = out_t.node();
    node->requires_grad = true;
    for (auto& p : inputs)
      if (p->requires_grad) node->parents.push_back(p);
    node->backward_fn = [node, inputs, ax] {
      Lanes l = lanes_for(node->shape, ax);
      Eigen::Index offset2 = 0;
      for (const NodePtr& p : inputs) {
        const Eigen::Index pn = p->shape[static_cast<std::size_t>(ax)];
        const Eigen::Index chunk = pn * l.inner;
        if (p->requires_grad) {
          p->ensure_grad();
          for (Eigen::Index o = 0; o < l.outer; ++o)
            p->grad.segment(o * chunk, chunk) += node->grad.segment((o * l.n + offset2) * l.inner, chunk);
        }
        offset2 += pn;
      }
    };
  }
  return out_t;
}

Tensor slice(const Tensor& x, int axis, Eigen::Index begin, Eigen::Index end) {
  Lanes l = lanes_for(x.shape(), axis);
  check(begin >= 0 && begin < end && end <= l.n, Errc::shape_mismatch,
        "slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for shape " +
            shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = end - begin;
  const Eigen::Index chunk = (end - begin) * l.inner;
  Eigen::ArrayXd out(shape_size(out_shape));
  for (Eigen::Index o = 0; o < l.outer; ++o)
    out.segment(o * chunk, chunk) = x.values().segment((o * l.n + begin) * l.inner, chunk);

  const int ax = axis;
  const Eigen::Index b = begin;
  Tensor out_t = Tensor::from_flat(std::move(out_shape), std::move(out));
  check_finite(out_t.values(), "slice");
  if (grad_enabled() && x.requires_grad()) {
    TensorNode* node = out_t.node();
    node->requires_grad = true;
    node->parents.push_back(x.node_ptr());
    node->backward_fn = [node, px = x.node_ptr(), ax, b] {
      Lanes pl = lanes_for(px->shape, ax);
      const Eigen::Index n_out = node->shape[static_cast<std::size_t>(ax)];
      const Eigen::Index chunk2 = n_out * pl.inner;
      px->ensure_grad();
      for (Eigen::Index o = 0; o < pl.outer; ++o)
        px->grad.segment((o * pl.n + b) * pl.inner, chunk2) += node->grad.segment(o * chunk2, chunk2);
    };
  }
  return out_t;
}

Tensor transpose(const Tensor& x) {
  check(x.rank() == 2, Errc::shape_mismatch, "transpose requires rank 2, got " + shape_str(x.shape()));
  const Eigen::Index r = x.dim(0), c = x.dim(1);
  Eigen::ArrayXd out(r * c);
  Eigen::Map<RowMat>(out.data(), c, r) = Eigen::Map<const RowMat>(x.values().data(), r, c).transpose();
  return make_result(Shape{c, r}, std::move(out), "transpose", {x.node_ptr()},
                     +[](TensorNode* node, const std::vector<NodePtr>& in) -> std::function<void()> {
                       return [node, px = in[0]] {
                         if (!tracked(px)) return;
                         const Eigen::Index r2 = px->shape[0], c2 = px->shape[1];
                         px->ensure_grad();
                         Eigen::Map<RowMat>(px->grad.data(), r2, c2) +=
                             Eigen::Map<const RowMat>(node->grad.data(), c2, r2).transpose();
                       };
                     });
}

Tensor scale(const Tensor& x, double s) {
  Eigen::ArrayXd out = x.values() * s;
  Tensor out_t = Tensor::from_flat(x.shape(), std::move(out));
  check_finite(out_t.values(), "scale");
  if (grad_enabled() && x.requires_grad()) {
    TensorNode* node = out_t.node();
    node->requires_grad = true;
    node->parents.push_back(x.node_ptr());
    node->backward_fn = [node, px = x.node_ptr(), s] {
      px->ensure_grad();
      px->grad += node->grad * s;
    };
  }
  return out_t;
}

Tensor sigmoid(const Tensor& x) {
  // Branch on sign for stability: never exponentiate a large positive value.
  Eigen::ArrayXd out = x.values().unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return make_result(x.shape(), std::move(out), "sigmoid", {x.node_ptr()},
                     +[](TensorNode* node, const std::vector<NodePtr>& in) -> std::function<void()> {
                       return [node, px = in[0]] {
                         if (!tracked(px)) return;
                         px->ensure_grad();
                         px->grad += node->grad * node->values * (1.0 - node->values);
                       };
                     });
}

Tensor tanh(const Tensor& x) {
  Eigen::ArrayXd out = x.values().unaryExpr([](double v) { return std::tanh(v); });
  return make_result(x.shape(), std::move(out), "tanh", {x.node_ptr()},
                     +[](TensorNode* node, const std::vector<NodePtr>& in) -> std::function<void()> {
                       return [node, px = in[0]] {
                         if (!tracked(px)) return;
                         px->ensure_grad();
                         px->grad += node->grad * (1.0 - node->values.square());
                       };
                     });
}

Tensor softmax(const Tensor& x, int axis) {
  Lanes l = lanes_for(x.shape(), axis);
  Eigen::ArrayXd out(x.size());
  for (Eigen::Index o = 0; o < l.outer; ++o) {
    for (Eigen::Index i = 0; i < l.inner; ++i) {
      const Eigen::Index base = o * l.n * l.inner + i;
      double mx = x.values()[base];
      for (Eigen::Index j = 1; j < l.n; ++j) mx = std::max(mx, x.values()[base + j * l.inner]);
      double denom = 0.0;
      for (Eigen::Index j = 0; j < l.n; ++j) {
        const double e = std::exp(x.values()[base + j * l.inner] - mx);
        out[base + j * l.inner] = e;
        denom += e;
      }
      for (Eigen::Index j = 0; j < l.n; ++j) out[base + j * l.inner] /= denom;
    }
  }

  const int ax = axis;
  Tensor out_t = Tensor::from_flat(x.shape(), std::move(out));
  check_finite(out_t.values(), "softmax");
  if (grad_enabled() && x.requires_grad()) {
    TensorNode* node = out_t.node();
    node->requires_grad = true;
    node->parents.push_back(x.node_ptr());
    node->backward_fn = [node, px = x.node_ptr(), ax] {
      Lanes pl = lanes_for(node->shape, ax);
      px->ensure_grad();
      for (Eigen::Index o = 0; o < pl.outer; ++o) {
        for (Eigen::Index i = 0; i < pl.inner; ++i) {
          const Eigen::Index base = o * pl.n * pl.inner + i;
          double dot = 0.0;
          for (Eigen::Index j = 0; j < pl.n; ++j) {
            const Eigen::Index idx = base + j * pl.inner;
            dot += node->grad[idx] * node->values[idx];
          }
          for (Eigen::Index j = 0; j < pl.n; ++j) {
            const Eigen::Index idx = base + j * pl.inner;
            px->grad[idx] += node->values[idx] * (node->grad[idx] - dot);
          }
        }
      }
    };
  }
  return out_t;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride_r,
              int stride_c) {
  check(input.rank() == 2, Errc::shape_mismatch, "conv2d input must be rank 2, got " + shape_str(input.shape()));
  check(kernel.rank() == 2, Errc::shape_mismatch, "conv2d kernel must be rank 2, got " + shape_str(kernel.shape()));
  check(stride_r >= 1 && stride_c >= 1, Errc::shape_mismatch, "conv2d strides must be >= 1");
  const Eigen::Index rows = input.dim(0), cols = input.dim(1);
  const Eigen::Index kr = kernel.dim(0), kc = kernel.dim(1);
  check(kr <= rows && kc <= cols, Errc::shape_mismatch,
        "conv2d kernel " + shape_str(kernel.shape()) + " exceeds input " + shape_str(input.shape()));
  if (bias.defined()) check(bias.size() == 1, Errc::shape_mismatch, "conv2d bias must be a scalar");

  const Eigen::Index out_r = (rows - kr) / stride_r + 1;
  const Eigen::Index out_c = (cols - kc) / stride_c + 1;
  const double b0 = bias.defined() ? bias.values()[0] : 0.0;

  Eigen::ArrayXd out(out_r * out_c);
  Eigen::Map<const RowMat> in_m(input.values().data(), rows, cols);
  Eigen::Map<const RowMat> k_m(kernel.values().data(), kr, kc);
  for (Eigen::Index i = 0; i < out_r; ++i)
    for (Eigen::Index j = 0; j < out_c; ++j)
      out[i * out_c + j] = b0 + (in_m.block(i * stride_r, j * stride_c, kr, kc).array() * k_m.array()).sum();

  std::vector<NodePtr> inputs{input.node_ptr(), kernel.node_ptr()};
  if (bias.defined()) inputs.push_back(bias.node_ptr());
  Tensor out_t = Tensor::from_flat(Shape{out_r, out_c}, std::move(out));
  check_finite(out_t.values(), "conv2d");

  bool any_tracked = false;
  for (const auto& p : inputs)
    if (p->requires_grad) any_tracked = true;
  if (grad_enabled() && any_tracked) {
    TensorNode* node = out_t.node();
    node->requires_grad = true;
    for (auto& p : inputs)
      if (p->requires_grad) node->parents.push_back(p);
    const int sr = stride_r, sc = stride_c;
    NodePtr pb = bias.defined() ? bias.node_ptr() : nullptr;
    node->backward_fn = [node, pi = input.node_ptr(), pk = kernel.node_ptr(), pb, sr, sc] {
      const Eigen::Index rows2 = pi->shape[0], cols2 = pi->shape[1];
      const Eigen::Index kr2 = pk->shape[0], kc2 = pk->shape[1];
      const Eigen::Index or2 = node->shape[0], oc2 = node->shape[1];
      Eigen::Map<const RowMat> go(node->grad.data(), or2, oc2);
      if (pi->requires_grad) {
        pi->ensure_grad();
        Eigen::Map<RowMat> gi(pi->grad.data(), rows2, cols2);
        Eigen::Map<const RowMat> k_m(pk->values.data(), kr2, kc2);
        for (Eigen::Index i = 0; i < or2; ++i)
          for (Eigen::Index j = 0; j < oc2; ++j)
            gi.block(i * sr, j * sc, kr2, kc2) += go(i, j) * k_m;
      }
      if (pk->requires_grad) {
        pk->ensure_grad();
        Eigen::Map<RowMat> gk(pk->grad.data(), kr2, kc2);
        Eigen::Map<const RowMat> in_m(pi->values.data(), rows2, cols2);
        for (Eigen::Index i = 0; i < or2; ++i)
          for (Eigen::Index j = 0; j < oc2; ++j)
            gk += go(i, j) * in_m.block(i * sr, j * sc, kr2, kc2);
      }
      if (pb && pb->requires_grad) {
        pb->ensure_grad();
        pb->grad[0] += go.sum();
      }
    };
  }
  return out_t;
}

Tensor sum(const Tensor& x) {
  Eigen::ArrayXd out(1);
  out[0] = x.values().sum();
  return make_result(Shape{}, std::move(out), "sum", {x.node_ptr()},
                     +[](TensorNode* node, const std::vector<NodePtr>& in) -> std::function<void()> {
                       return [node, px = in[0]] {
                         if (!tracked(px)) return;
                         px->ensure_grad();
                         px->grad += node->grad[0];
                       };
                     });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  check(shape_size(new_shape) == x.size(), Errc::shape_mismatch,
        "reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape) + " changes element count");
  Eigen::ArrayXd out = x.values();
  return make_result(std::move(new_shape), std::move(out), "reshape", {x.node_ptr()},
                     +[](TensorNode* node, const std::vector<NodePtr>& in) -> std::function<void()> {
                       return [node, px = in[0]] {
                         if (!tracked(px)) return;
                         px->ensure_grad();
                         px->grad += node->grad;  // identical flat layout
                       };
                     });
}

Tensor flatten(const Tensor& x) { return reshape(x, Shape{x.size()}); }

// ---- backward sweep -------------------------------------------------------

void backward(const Tensor& loss) {
  check(loss.defined() && loss.size() == 1, Errc::not_scalar_loss,
        "backward requires a single-element loss tensor");

  // Iterative post-order DFS; child-before-parent, then reversed so every
  // node's gradient is complete before its backward_fn runs. The order list
  // holds shared ownership: releasing a node's tape links below may drop the
  // last external reference to its parents.
  std::vector<NodePtr> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    NodePtr node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{loss.node_ptr(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      const NodePtr& p = f.node->parents[f.next_parent++];
      if (visited.insert(p.get()).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  TensorNode* root = loss.node();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = it->get();
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn();
      n->backward_fn = nullptr;  // release the tape as we go
    }
    n->parents.clear();
  }
}

// ---- finite-difference verification ----------------------------------------

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps) {
  check(eps >= 1e-7 && eps <= 1e-4, Errc::bad_config,
        "grad_check eps must lie in [1e-7, 1e-4]");

  auto eval = [&f]() -> double {
    NoGradGuard guard;
    return f().value();
  };

  const double v1 = eval();
  const double v2 = eval();
  if (v1 != v2) raise(Errc::non_deterministic_function, "function value changed between identical calls");

  for (Tensor& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  backward(f());
  std::vector<Eigen::ArrayXd> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params) analytic.push_back(p.grad());

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Eigen::ArrayXd& v = params[pi].values_mut();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + eps;
      const double f_plus = eval();
      v[i] = orig - eps;
      const double f_minus = eval();
      v[i] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace irnet
