#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

// Reverse-mode tensor engine. Values are row-major; shapes are explicit and
// ops never broadcast except where a primitive's contract says so (bias adds,
// batch expansion). Training instantiates T = float, gradient checks T = double.
namespace ccs::ad {

inline size_t numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

[[noreturn]] inline void op_error(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

template <typename T>
struct Node {
  std::vector<int> shape;
  std::vector<T> values;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor leaf(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != numel(shape))
      op_error("leaf", "got " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    std::vector<T> v(numel(shape), T(0));
    return leaf(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(std::vector<int> shape, T value, bool requires_grad = false) {
    std::vector<T> v(numel(shape), value);
    return leaf(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return leaf({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  size_t size() const { return node_->values.size(); }
  std::vector<T>& values() { return node_->values; }
  const std::vector<T>& values() const { return node_->values; }
  T item() const {
    if (size() != 1) op_error("item", "tensor is not scalar, shape " + shape_str(shape()));
    return node_->values[0];
  }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }
  std::shared_ptr<Node<T>>& node() { return node_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Tensor<T> make_op(std::vector<int> shape, std::vector<T> values,
                  std::vector<std::shared_ptr<Node<T>>> parents,
                  std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

// Reverse topological sweep from a scalar loss. Gradients accumulate into any
// existing grad buffers; callers reset parameter grads between steps.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    op_error("backward", "loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, bool>> stack;
  stack.emplace_back(loss.node().get(), false);
  while (!stack.empty()) {
    auto [n, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(n);
      continue;
    }
    if (visited.count(n)) continue;
    visited.insert(n);
    stack.emplace_back(n, true);
    for (const auto& p : n->parents)
      if (p->requires_grad && !visited.count(p.get())) stack.emplace_back(p.get(), false);
  }

  for (Node<T>* n : order) n->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

namespace detail {

template <typename T>
void accumulate(Node<T>* dst, const std::vector<T>& g) {
  if (!dst->requires_grad) return;
  dst->ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) dst->grad[i] += g[i];
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    op_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Splits a shape at `axis` into (outer, len, inner) extents for strided loops.
inline void axis_extents(const std::vector<int>& shape, int axis, size_t* outer, size_t* len,
                         size_t* inner) {
  *outer = 1;
  *inner = 1;
  for (int i = 0; i < axis; ++i) *outer *= static_cast<size_t>(shape[static_cast<size_t>(i)]);
  *len = static_cast<size_t>(shape[static_cast<size_t>(axis)]);
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i)
    *inner *= static_cast<size_t>(shape[i]);
}

}  // namespace detail

// ---- elementwise binary ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    detail::accumulate(an.get(), self.grad);
    detail::accumulate(bn.get(), self.grad);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<T> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    detail::accumulate(an.get(), self.grad);
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->values[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->values[i];
    }
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("div", a, b);
  std::vector<T> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] / bn->values[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        const T d = bn->values[i];
        bn->grad[i] -= self.grad[i] * an->values[i] / (d * d);
      }
    }
  });
}

// atan2(y, x) elementwise; gradients x/(x^2+y^2) and -y/(x^2+y^2).
template <typename T>
Tensor<T> atan2_op(const Tensor<T>& y, const Tensor<T>& x) {
  detail::require_same_shape("atan2", y, x);
  std::vector<T> out(y.size());
  const auto& yv = y.values();
  const auto& xv = x.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::atan2(yv[i], xv[i]);
  auto yn = y.node(), xn = x.node();
  return make_op<T>(y.shape(), std::move(out), {yn, xn}, [yn, xn](Node<T>& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const T yi = yn->values[i];
      const T xi = xn->values[i];
      const T r2 = xi * xi + yi * yi;
      if (r2 == T(0)) continue;
      if (yn->requires_grad) {
        yn->ensure_grad();
        yn->grad[i] += self.grad[i] * xi / r2;
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        xn->grad[i] -= self.grad[i] * yi / r2;
      }
    }
  });
}

// hypot(x, y) elementwise; subgradient 0 at the origin.
template <typename T>
Tensor<T> hypot_op(const Tensor<T>& x, const Tensor<T>& y) {
  detail::require_same_shape("hypot", x, y);
  std::vector<T> out(x.size());
  const auto& xv = x.values();
  const auto& yv = y.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(xv[i], yv[i]);
  auto xn = x.node(), yn = y.node();
  auto on = out;  // copy of outputs for the backward closure
  return make_op<T>(x.shape(), std::move(out), {xn, yn}, [xn, yn, on](Node<T>& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const T h = on[i];
      if (h == T(0)) continue;
      if (xn->requires_grad) {
        xn->ensure_grad();
        xn->grad[i] += self.grad[i] * xn->values[i] / h;
      }
      if (yn->requires_grad) {
        yn->ensure_grad();
        yn->grad[i] += self.grad[i] * yn->values[i] / h;
      }
    }
  });
}

// ---- elementwise unary ----

namespace detail {

template <typename T, typename F, typename G>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, F&& f, G&& df_from_in_out) {
  (void)name;
  std::vector<T> out(x.size());
  const auto& xv = x.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  auto xn = x.node();
  std::vector<T> saved_out = out;
  return make_op<T>(
      x.shape(), std::move(out), {xn},
      [xn, saved_out = std::move(saved_out), df = std::forward<G>(df_from_in_out)](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          xn->grad[i] += self.grad[i] * df(xn->values[i], saved_out[i]);
      });
}

}  // namespace detail

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return detail::unary_op(
      "neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary_op(
      "scale", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary_op(
      "add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return detail::unary_op(
      "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      "sigmoid", x,
      [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T, T s) { return s * (T(1) - s); });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x) {
  return detail::unary_op(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T t) { return T(1) - t * t; });
}

template <typename T>
Tensor<T> exp_op(const Tensor<T>& x) {
  return detail::unary_op(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T e) { return e; });
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& x) {
  return detail::unary_op(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt_op(const Tensor<T>& x) {
  return detail::unary_op(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T, T s) { return s > T(0) ? T(1) / (T(2) * s) : T(0); });
}

template <typename T>
Tensor<T> abs_op(const Tensor<T>& x) {
  return detail::unary_op(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// Principal angle in (-pi, pi]; derivative 1 away from the wrap seam.
template <typename T>
Tensor<T> wrap_angle_op(const Tensor<T>& x) {
  return detail::unary_op(
      "wrap_angle", x,
      [](T v) {
        const T pi = T(3.14159265358979323846);
        T w = std::remainder(v, T(2) * pi);
        if (w <= -pi) w = pi;
        return w;
      },
      [](T, T) { return T(1); });
}

// ---- shape ops ----

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> new_shape) {
  if (numel(new_shape) != x.size())
    op_error("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  auto xn = x.node();
  std::vector<T> out = x.values();
  return make_op<T>(std::move(new_shape), std::move(out), {xn},
                    [xn](Node<T>& self) { detail::accumulate(xn.get(), self.grad); });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::vector<int> perm) {
  const int nd = x.ndim();
  if (static_cast<int>(perm.size()) != nd) op_error("permute", "perm rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  for (int p : perm) {
    if (p < 0 || p >= nd || seen[static_cast<size_t>(p)]) op_error("permute", "invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }

  const auto& shape = x.shape();
  std::vector<int> out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = shape[static_cast<size_t>(perm[static_cast<size_t>(i)])];

  std::vector<size_t> in_strides(static_cast<size_t>(nd), 1);
  for (int i = nd - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] =
        in_strides[static_cast<size_t>(i) + 1] * static_cast<size_t>(shape[static_cast<size_t>(i) + 1]);

  const size_t n = x.size();
  std::vector<size_t> map(n);  // output linear index -> input linear index
  std::vector<int> idx(static_cast<size_t>(nd), 0);
  for (size_t lin = 0; lin < n; ++lin) {
    size_t src = 0;
    for (int i = 0; i < nd; ++i)
      src += static_cast<size_t>(idx[static_cast<size_t>(i)]) *
             in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    map[lin] = src;
    for (int i = nd - 1; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }

  std::vector<T> out(n);
  const auto& xv = x.values();
  for (size_t i = 0; i < n; ++i) out[i] = xv[map[i]];
  auto xn = x.node();
  return make_op<T>(std::move(out_shape), std::move(out), {xn},
                    [xn, map = std::move(map)](Node<T>& self) {
                      if (!xn->requires_grad) return;
                      xn->ensure_grad();
                      for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[map[i]] += self.grad[i];
                    });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int len) {
  const auto& shape = x.shape();
  if (axis < 0 || axis >= x.ndim()) op_error("slice", "axis out of range");
  if (start < 0 || len <= 0 || start + len > shape[static_cast<size_t>(axis)])
    op_error("slice", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                          ") outside axis extent " + std::to_string(shape[static_cast<size_t>(axis)]));
  size_t outer, alen, inner;
  detail::axis_extents(shape, axis, &outer, &alen, &inner);

  std::vector<int> out_shape = shape;
  out_shape[static_cast<size_t>(axis)] = len;
  std::vector<T> out(outer * static_cast<size_t>(len) * inner);
  const auto& xv = x.values();
  for (size_t o = 0; o < outer; ++o)
    for (size_t j = 0; j < static_cast<size_t>(len); ++j)
      std::copy_n(xv.begin() + ((o * alen + static_cast<size_t>(start) + j) * inner), inner,
                  out.begin() + ((o * static_cast<size_t>(len) + j) * inner));

  auto xn = x.node();
  return make_op<T>(std::move(out_shape), std::move(out), {xn},
                    [xn, outer, alen, inner, start, len](Node<T>& self) {
                      if (!xn->requires_grad) return;
                      xn->ensure_grad();
                      for (size_t o = 0; o < outer; ++o)
                        for (size_t j = 0; j < static_cast<size_t>(len); ++j) {
                          const T* g = self.grad.data() + (o * static_cast<size_t>(len) + j) * inner;
                          T* dst = xn->grad.data() + (o * alen + static_cast<size_t>(start) + j) * inner;
                          for (size_t i = 0; i < inner; ++i) dst[i] += g[i];
                        }
                    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) op_error("concat", "no inputs");
  const int nd = parts[0].ndim();
  if (axis < 0 || axis >= nd) op_error("concat", "axis out of range");
  int total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != nd) op_error("concat", "rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != axis && p.dim(i) != parts[0].dim(i))
        op_error("concat", "shape mismatch " + shape_str(p.shape()) + " vs " +
                               shape_str(parts[0].shape()));
    total += p.dim(axis);
  }

  std::vector<int> out_shape = parts[0].shape();
  out_shape[static_cast<size_t>(axis)] = total;
  size_t outer, tlen, inner;
  detail::axis_extents(out_shape, axis, &outer, &tlen, &inner);

  std::vector<T> out(numel(out_shape));
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<size_t> part_lens;
  size_t off = 0;
  for (const auto& p : parts) {
    const size_t plen = static_cast<size_t>(p.dim(axis));
    const auto& pv = p.values();
    for (size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * plen * inner, plen * inner,
                  out.begin() + (o * tlen + off) * inner);
    parents.push_back(p.node());
    part_lens.push_back(plen);
    off += plen;
  }

  auto parents_copy = parents;
  return make_op<T>(std::move(out_shape), std::move(out), std::move(parents),
                    [parents = std::move(parents_copy), part_lens = std::move(part_lens), outer,
                     tlen, inner](Node<T>& self) {
                      size_t off = 0;
                      for (size_t k = 0; k < parents.size(); ++k) {
                        Node<T>* p = parents[k].get();
                        const size_t plen = part_lens[k];
                        if (p->requires_grad) {
                          p->ensure_grad();
                          for (size_t o = 0; o < outer; ++o) {
                            const T* g = self.grad.data() + (o * tlen + off) * inner;
                            T* dst = p->grad.data() + o * plen * inner;
                            for (size_t i = 0; i < plen * inner; ++i) dst[i] += g[i];
                          }
                        }
                        off += plen;
                      }
                    });
}

// Repeats x along a new leading batch axis; gradient sums over the copies.
template <typename T>
Tensor<T> expand_batch(const Tensor<T>& x, int n) {
  if (n <= 0) op_error("expand_batch", "batch size must be positive");
  std::vector<int> out_shape;
  out_shape.push_back(n);
  for (int d : x.shape()) out_shape.push_back(d);
  const size_t m = x.size();
  std::vector<T> out(static_cast<size_t>(n) * m);
  for (int b = 0; b < n; ++b)
    std::copy_n(x.values().begin(), m, out.begin() + static_cast<size_t>(b) * m);
  auto xn = x.node();
  return make_op<T>(std::move(out_shape), std::move(out), {xn}, [xn, n, m](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int b = 0; b < n; ++b) {
      const T* g = self.grad.data() + static_cast<size_t>(b) * m;
      for (size_t i = 0; i < m; ++i) xn->grad[i] += g[i];
    }
  });
}

// ---- reductions ----

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += static_cast<double>(v);
  auto xn = x.node();
  return make_op<T>({1}, {static_cast<T>(acc)}, {xn}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T g = self.grad[0];
    for (auto& gi : xn->grad) gi += g;
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  const size_t n = x.size();
  if (n == 0) op_error("mean", "empty tensor");
  double acc = 0.0;
  for (T v : x.values()) acc += static_cast<double>(v);
  auto xn = x.node();
  return make_op<T>({1}, {static_cast<T>(acc / static_cast<double>(n))}, {xn},
                    [xn, n](Node<T>& self) {
                      if (!xn->requires_grad) return;
                      xn->ensure_grad();
                      const T g = self.grad[0] / static_cast<T>(n);
                      for (auto& gi : xn->grad) gi += g;
                    });
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.ndim()) op_error("sum_axis", "axis out of range");
  size_t outer, len, inner;
  detail::axis_extents(x.shape(), axis, &outer, &len, &inner);

  std::vector<int> out_shape;
  for (int i = 0; i < x.ndim(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);

  std::vector<T> out(outer * inner, T(0));
  const auto& xv = x.values();
  for (size_t o = 0; o < outer; ++o)
    for (size_t j = 0; j < len; ++j) {
      const T* src = xv.data() + (o * len + j) * inner;
      T* dst = out.data() + o * inner;
      for (size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }

  auto xn = x.node();
  return make_op<T>(std::move(out_shape), std::move(out), {xn},
                    [xn, outer, len, inner](Node<T>& self) {
                      if (!xn->requires_grad) return;
                      xn->ensure_grad();
                      for (size_t o = 0; o < outer; ++o)
                        for (size_t j = 0; j < len; ++j) {
                          const T* g = self.grad.data() + o * inner;
                          T* dst = xn->grad.data() + (o * len + j) * inner;
                          for (size_t i = 0; i < inner; ++i) dst[i] += g[i];
                        }
                    });
}

}  // namespace ccs::ad
