#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "ccstereo/tensor.hpp"

namespace ccs::ad {

namespace detail {

// All gemm kernels accumulate in SAXPY form so the inner loop vectorizes
// without reassociating float sums (keeps results deterministic).

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const T* a_row = a + i * k;
    T* c_row = c + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      const T av = a_row[kk];
      const T* b_row = b + kk * n;
      for (size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  }
}

// C[k,n] += A^T * B where A is [m,k], B is [m,n]
template <typename T>
void gemm_at_acc(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const T* a_row = a + i * k;
    const T* b_row = b + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      const T av = a_row[kk];
      T* c_row = c + kk * n;
      for (size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  }
}

template <typename T>
void transpose2d(const T* src, T* dst, size_t rows, size_t cols) {
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

}  // namespace detail

// matmul accepts (m,k)x(k,n), (B,m,k)x(B,k,n), and (B,m,k)x(k,n).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const int and_ = a.ndim();
  const int bnd = b.ndim();
  if ((and_ != 2 && and_ != 3) || (bnd != 2 && bnd != 3) || (and_ == 2 && bnd == 3))
    op_error("matmul", "unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));

  const size_t batch = and_ == 3 ? static_cast<size_t>(a.dim(0)) : 1;
  const size_t m = static_cast<size_t>(a.dim(and_ - 2));
  const size_t k = static_cast<size_t>(a.dim(and_ - 1));
  const size_t bk = static_cast<size_t>(b.dim(bnd - 2));
  const size_t n = static_cast<size_t>(b.dim(bnd - 1));
  if (k != bk)
    op_error("matmul", "inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  if (bnd == 3 && static_cast<size_t>(b.dim(0)) != batch)
    op_error("matmul", "batch dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));

  const bool b_shared = (bnd == 2);
  const size_t a_stride = m * k;
  const size_t b_stride = b_shared ? 0 : k * n;

  std::vector<int> out_shape;
  if (and_ == 3) out_shape = {static_cast<int>(batch), static_cast<int>(m), static_cast<int>(n)};
  else out_shape = {static_cast<int>(m), static_cast<int>(n)};

  std::vector<T> out(batch * m * n, T(0));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (size_t s = 0; s < batch; ++s)
    detail::gemm_acc(av + s * a_stride, bv + s * b_stride, out.data() + s * m * n, m, k, n);

  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out_shape), std::move(out), {an, bn},
                    [an, bn, batch, m, k, n, a_stride, b_stride](Node<T>& self) {
                      if (an->requires_grad) {
                        an->ensure_grad();
                        // dA = G * B^T, via a transposed copy of each B slice
                        std::vector<T> bt(k * n);
                        for (size_t s = 0; s < batch; ++s) {
                          if (s == 0 || b_stride != 0)
                            detail::transpose2d(bn->values.data() + s * b_stride, bt.data(), k, n);
                          detail::gemm_acc(self.grad.data() + s * m * n, bt.data(),
                                           an->grad.data() + s * a_stride, m, n, k);
                        }
                      }
                      if (bn->requires_grad) {
                        bn->ensure_grad();
                        for (size_t s = 0; s < batch; ++s)
                          detail::gemm_at_acc(an->values.data() + s * a_stride,
                                              self.grad.data() + s * m * n,
                                              bn->grad.data() + s * b_stride, m, k, n);
                      }
                    });
}

// Adds a length-n bias vector along the last axis.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.ndim() != 1 || bias.dim(0) != x.dim(x.ndim() - 1))
    op_error("add_bias", "bias " + shape_str(bias.shape()) + " does not match last axis of " +
                             shape_str(x.shape()));
  const size_t n = static_cast<size_t>(bias.dim(0));
  const size_t rows = x.size() / n;
  std::vector<T> out(x.size());
  const auto& xv = x.values();
  const auto& bv = bias.values();
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] + bv[j];
  auto xn = x.node(), bn = bias.node();
  return make_op<T>(x.shape(), std::move(out), {xn, bn}, [xn, bn, rows, n](Node<T>& self) {
    detail::accumulate(xn.get(), self.grad);
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < n; ++j) bn->grad[j] += self.grad[r * n + j];
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.ndim()) op_error("softmax", "axis out of range");
  size_t outer, len, inner;
  detail::axis_extents(x.shape(), axis, &outer, &len, &inner);

  std::vector<T> out(x.size());
  const auto& xv = x.values();
  for (size_t o = 0; o < outer; ++o)
    for (size_t i = 0; i < inner; ++i) {
      const size_t base = o * len * inner + i;
      T mx = xv[base];
      for (size_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double denom = 0.0;
      for (size_t j = 0; j < len; ++j) {
        const T e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        denom += static_cast<double>(e);
      }
      const T inv = static_cast<T>(1.0 / denom);
      for (size_t j = 0; j < len; ++j) out[base + j * inner] *= inv;
    }

  auto xn = x.node();
  std::vector<T> saved = out;
  return make_op<T>(x.shape(), std::move(out), {xn},
                    [xn, saved = std::move(saved), outer, len, inner](Node<T>& self) {
                      if (!xn->requires_grad) return;
                      xn->ensure_grad();
                      for (size_t o = 0; o < outer; ++o)
                        for (size_t i = 0; i < inner; ++i) {
                          const size_t base = o * len * inner + i;
                          double dot = 0.0;
                          for (size_t j = 0; j < len; ++j)
                            dot += static_cast<double>(self.grad[base + j * inner]) *
                                   static_cast<double>(saved[base + j * inner]);
                          for (size_t j = 0; j < len; ++j) {
                            const size_t idx = base + j * inner;
                            xn->grad[idx] += saved[idx] * (self.grad[idx] - static_cast<T>(dot));
                          }
                        }
                    });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.ndim()) op_error("l2_normalize", "axis out of range");
  size_t outer, len, inner;
  detail::axis_extents(x.shape(), axis, &outer, &len, &inner);

  std::vector<T> out(x.size());
  std::vector<T> inv_norm(outer * inner);
  const auto& xv = x.values();
  for (size_t o = 0; o < outer; ++o)
    for (size_t i = 0; i < inner; ++i) {
      const size_t base = o * len * inner + i;
      double ss = 1e-12;
      for (size_t j = 0; j < len; ++j) {
        const double v = static_cast<double>(xv[base + j * inner]);
        ss += v * v;
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(ss));
      inv_norm[o * inner + i] = inv;
      for (size_t j = 0; j < len; ++j) out[base + j * inner] = xv[base + j * inner] * inv;
    }

  auto xn = x.node();
  return make_op<T>(
      x.shape(), std::move(out), {xn},
      [xn, inv_norm = std::move(inv_norm), outer, len, inner](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t o = 0; o < outer; ++o)
          for (size_t i = 0; i < inner; ++i) {
            const size_t base = o * len * inner + i;
            const T inv = inv_norm[o * inner + i];
            double dot = 0.0;
            for (size_t j = 0; j < len; ++j)
              dot += static_cast<double>(self.grad[base + j * inner]) *
                     static_cast<double>(xn->values[base + j * inner]);
            const T c = static_cast<T>(dot) * inv * inv * inv;
            for (size_t j = 0; j < len; ++j) {
              const size_t idx = base + j * inner;
              xn->grad[idx] += self.grad[idx] * inv - xn->values[idx] * c;
            }
          }
      });
}

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
  if (x.ndim() != 4) op_error("upsample_nearest2", "expected NCHW, got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(static_cast<size_t>(n) * c * 4 * h * w);
  const auto& xv = x.values();
  const size_t plane = static_cast<size_t>(h) * w;
  for (int nc = 0; nc < n * c; ++nc) {
    const T* src = xv.data() + static_cast<size_t>(nc) * plane;
    T* dst = out.data() + static_cast<size_t>(nc) * plane * 4;
    for (int y = 0; y < h; ++y)
      for (int x2 = 0; x2 < w; ++x2) {
        const T v = src[static_cast<size_t>(y) * w + x2];
        const size_t b = static_cast<size_t>(2 * y) * (2 * w) + 2 * x2;
        dst[b] = v;
        dst[b + 1] = v;
        dst[b + 2 * w] = v;
        dst[b + 2 * w + 1] = v;
      }
  }
  auto xn = x.node();
  return make_op<T>({n, c, 2 * h, 2 * w}, std::move(out), {xn},
                    [xn, n, c, h, w, plane](Node<T>& self) {
                      if (!xn->requires_grad) return;
                      xn->ensure_grad();
                      for (int nc = 0; nc < n * c; ++nc) {
                        const T* g = self.grad.data() + static_cast<size_t>(nc) * plane * 4;
                        T* dst = xn->grad.data() + static_cast<size_t>(nc) * plane;
                        for (int y = 0; y < h; ++y)
                          for (int x2 = 0; x2 < w; ++x2) {
                            const size_t b = static_cast<size_t>(2 * y) * (2 * w) + 2 * x2;
                            dst[static_cast<size_t>(y) * w + x2] +=
                                g[b] + g[b + 1] + g[b + 2 * w] + g[b + 2 * w + 1];
                          }
                      }
                    });
}

// Average pooling; stride defaults to the kernel (non-overlapping windows).
template <typename T>
Tensor<T> avgpool2d(const Tensor<T>& x, int kh, int kw, int sh = 0, int sw = 0) {
  if (x.ndim() != 4) op_error("avgpool2d", "expected NCHW, got " + shape_str(x.shape()));
  if (sh <= 0) sh = kh;
  if (sw <= 0) sw = kw;
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kh <= 0 || kw <= 0 || kh > h || kw > w)
    op_error("avgpool2d", "kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                              " too large for input " + shape_str(x.shape()));
  const int oh = (h - kh) / sh + 1;
  const int ow = (w - kw) / sw + 1;
  const T inv = T(1) / static_cast<T>(kh * kw);

  std::vector<T> out(static_cast<size_t>(n) * c * oh * ow);
  const auto& xv = x.values();
  for (int nc = 0; nc < n * c; ++nc) {
    const T* src = xv.data() + static_cast<size_t>(nc) * h * w;
    T* dst = out.data() + static_cast<size_t>(nc) * oh * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int i = 0; i < kh; ++i)
          for (int j = 0; j < kw; ++j)
            acc += static_cast<double>(src[static_cast<size_t>(oy * sh + i) * w + ox * sw + j]);
        dst[static_cast<size_t>(oy) * ow + ox] = static_cast<T>(acc) * inv;
      }
  }

  auto xn = x.node();
  return make_op<T>({n, c, oh, ow}, std::move(out), {xn},
                    [xn, n, c, h, w, oh, ow, kh, kw, sh, sw, inv](Node<T>& self) {
                      if (!xn->requires_grad) return;
                      xn->ensure_grad();
                      for (int nc = 0; nc < n * c; ++nc) {
                        const T* g = self.grad.data() + static_cast<size_t>(nc) * oh * ow;
                        T* dst = xn->grad.data() + static_cast<size_t>(nc) * h * w;
                        for (int oy = 0; oy < oh; ++oy)
                          for (int ox = 0; ox < ow; ++ox) {
                            const T gv = g[static_cast<size_t>(oy) * ow + ox] * inv;
                            for (int i = 0; i < kh; ++i)
                              for (int j = 0; j < kw; ++j)
                                dst[static_cast<size_t>(oy * sh + i) * w + ox * sw + j] += gv;
                          }
                      }
                    });
}

namespace detail {

struct ConvDims {
  int n, c, h, w;
  int o, kh, kw;
  int oh, ow;
  int stride, pad;
};

// col layout: (C*kh*kw) rows x (oh*ow) columns
template <typename T>
void im2col(const T* x, const ConvDims& d, T* col) {
  const size_t p = static_cast<size_t>(d.oh) * d.ow;
  for (int c = 0; c < d.c; ++c)
    for (int i = 0; i < d.kh; ++i)
      for (int j = 0; j < d.kw; ++j) {
        T* row = col + (static_cast<size_t>(c) * d.kh * d.kw + static_cast<size_t>(i) * d.kw + j) * p;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int y = oy * d.stride + i - d.pad;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int x2 = ox * d.stride + j - d.pad;
            row[static_cast<size_t>(oy) * d.ow + ox] =
                (y >= 0 && y < d.h && x2 >= 0 && x2 < d.w)
                    ? x[(static_cast<size_t>(c) * d.h + y) * d.w + x2]
                    : T(0);
          }
        }
      }
}

template <typename T>
void col2im_acc(const T* col, const ConvDims& d, T* x_grad) {
  const size_t p = static_cast<size_t>(d.oh) * d.ow;
  for (int c = 0; c < d.c; ++c)
    for (int i = 0; i < d.kh; ++i)
      for (int j = 0; j < d.kw; ++j) {
        const T* row =
            col + (static_cast<size_t>(c) * d.kh * d.kw + static_cast<size_t>(i) * d.kw + j) * p;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int y = oy * d.stride + i - d.pad;
          if (y < 0 || y >= d.h) continue;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int x2 = ox * d.stride + j - d.pad;
            if (x2 < 0 || x2 >= d.w) continue;
            x_grad[(static_cast<size_t>(c) * d.h + y) * d.w + x2] +=
                row[static_cast<size_t>(oy) * d.ow + ox];
          }
        }
      }
}

}  // namespace detail

// bias may be a default-constructed Tensor to skip the bias term.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int pad) {
  if (x.ndim() != 4 || w.ndim() != 4)
    op_error("conv2d", "expected NCHW input and OCHW weight, got " + shape_str(x.shape()) +
                           " and " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(1))
    op_error("conv2d", "input channels " + std::to_string(x.dim(1)) + " != weight channels " +
                           std::to_string(w.dim(1)));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != w.dim(0)))
    op_error("conv2d", "bias shape " + shape_str(bias.shape()) + " does not match filters");
  if (stride <= 0) op_error("conv2d", "stride must be positive");

  detail::ConvDims d;
  d.n = x.dim(0); d.c = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
  d.o = w.dim(0); d.kh = w.dim(2); d.kw = w.dim(3);
  d.stride = stride; d.pad = pad;
  if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw)
    op_error("conv2d", "kernel larger than padded input");
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;

  const size_t ckk = static_cast<size_t>(d.c) * d.kh * d.kw;
  const size_t p = static_cast<size_t>(d.oh) * d.ow;
  const size_t in_plane = static_cast<size_t>(d.c) * d.h * d.w;
  const size_t out_plane = static_cast<size_t>(d.o) * p;

  std::vector<T> out(static_cast<size_t>(d.n) * out_plane, T(0));
  {
    std::vector<T> col(ckk * p);
    const T* xv = x.values().data();
    const T* wv = w.values().data();
    for (int s = 0; s < d.n; ++s) {
      detail::im2col(xv + static_cast<size_t>(s) * in_plane, d, col.data());
      detail::gemm_acc(wv, col.data(), out.data() + static_cast<size_t>(s) * out_plane,
                       static_cast<size_t>(d.o), ckk, p);
    }
    if (has_bias) {
      const auto& bv = bias.values();
      for (int s = 0; s < d.n; ++s)
        for (int o = 0; o < d.o; ++o) {
          T* row = out.data() + static_cast<size_t>(s) * out_plane + static_cast<size_t>(o) * p;
          for (size_t i = 0; i < p; ++i) row[i] += bv[static_cast<size_t>(o)];
        }
    }
  }

  auto xn = x.node(), wn = w.node();
  auto bn = has_bias ? bias.node() : nullptr;
  std::vector<std::shared_ptr<Node<T>>> parents{xn, wn};
  if (bn) parents.push_back(bn);

  return make_op<T>({d.n, d.o, d.oh, d.ow}, std::move(out), std::move(parents),
                    [xn, wn, bn, d, ckk, p, in_plane, out_plane](Node<T>& self) {
                      std::vector<T> buf(ckk * p);
                      std::vector<T> buf_t(p * ckk);
                      if (wn->requires_grad || bn) {
                        if (wn->requires_grad) wn->ensure_grad();
                        if (bn && bn->requires_grad) bn->ensure_grad();
                        for (int s = 0; s < d.n; ++s) {
                          const T* g = self.grad.data() + static_cast<size_t>(s) * out_plane;
                          if (wn->requires_grad) {
                            detail::im2col(xn->values.data() + static_cast<size_t>(s) * in_plane, d,
                                           buf.data());
                            detail::transpose2d(buf.data(), buf_t.data(), ckk, p);
                            detail::gemm_acc(g, buf_t.data(), wn->grad.data(),
                                             static_cast<size_t>(d.o), p, ckk);
                          }
                          if (bn && bn->requires_grad) {
                            for (int o = 0; o < d.o; ++o) {
                              double acc = 0.0;
                              const T* row = g + static_cast<size_t>(o) * p;
                              for (size_t i = 0; i < p; ++i) acc += static_cast<double>(row[i]);
                              bn->grad[static_cast<size_t>(o)] += static_cast<T>(acc);
                            }
                          }
                        }
                      }
                      if (xn->requires_grad) {
                        xn->ensure_grad();
                        for (int s = 0; s < d.n; ++s) {
                          std::fill(buf.begin(), buf.end(), T(0));
                          detail::gemm_at_acc(wn->values.data(),
                                              self.grad.data() + static_cast<size_t>(s) * out_plane,
                                              buf.data(), static_cast<size_t>(d.o), ckk, p);
                          detail::col2im_acc(buf.data(), d,
                                             xn->grad.data() + static_cast<size_t>(s) * in_plane);
                        }
                      }
                    });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  return conv2d(x, w, Tensor<T>(), stride, pad);
}

// Transposed convolution; weight layout (C_in, C_out, kh, kw).
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           int stride, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4)
    op_error("conv2d_transpose", "expected NCHW input and C_in-C_out-kh-kw weight, got " +
                                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(0))
    op_error("conv2d_transpose", "input channels " + std::to_string(x.dim(1)) +
                                     " != weight input channels " + std::to_string(w.dim(0)));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != w.dim(1)))
    op_error("conv2d_transpose", "bias shape " + shape_str(bias.shape()) + " does not match filters");
  if (stride <= 0) op_error("conv2d_transpose", "stride must be positive");

  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h - 1) * stride + kh - 2 * pad;
  const int ow = (wd - 1) * stride + kw - 2 * pad;
  if (oh <= 0 || ow <= 0) op_error("conv2d_transpose", "empty output for " + shape_str(x.shape()));

  const size_t in_plane = static_cast<size_t>(c) * h * wd;
  const size_t out_plane = static_cast<size_t>(o) * oh * ow;
  std::vector<T> out(static_cast<size_t>(n) * out_plane, T(0));
  const T* xv = x.values().data();
  const T* wv = w.values().data();
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h; ++y)
        for (int x2 = 0; x2 < wd; ++x2) {
          const T v = xv[static_cast<size_t>(s) * in_plane +
                         (static_cast<size_t>(ci) * h + y) * wd + x2];
          for (int oc = 0; oc < o; ++oc) {
            const T* wrow = wv + ((static_cast<size_t>(ci) * o + oc) * kh) * kw;
            T* dst = out.data() + static_cast<size_t>(s) * out_plane +
                     static_cast<size_t>(oc) * oh * ow;
            for (int i = 0; i < kh; ++i) {
              const int ty = y * stride + i - pad;
              if (ty < 0 || ty >= oh) continue;
              for (int j = 0; j < kw; ++j) {
                const int tx = x2 * stride + j - pad;
                if (tx < 0 || tx >= ow) continue;
                dst[static_cast<size_t>(ty) * ow + tx] += v * wrow[static_cast<size_t>(i) * kw + j];
              }
            }
          }
        }
  if (has_bias) {
    const auto& bv = bias.values();
    for (int s = 0; s < n; ++s)
      for (int oc = 0; oc < o; ++oc) {
        T* row = out.data() + static_cast<size_t>(s) * out_plane + static_cast<size_t>(oc) * oh * ow;
        for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i) row[i] += bv[static_cast<size_t>(oc)];
      }
  }

  auto xn = x.node(), wn = w.node();
  auto bn = has_bias ? bias.node() : nullptr;
  std::vector<std::shared_ptr<Node<T>>> parents{xn, wn};
  if (bn) parents.push_back(bn);

  return make_op<T>(
      {n, o, oh, ow}, std::move(out), std::move(parents),
      [xn, wn, bn, n, c, h, wd, o, kh, kw, oh, ow, stride, pad, in_plane, out_plane](Node<T>& self) {
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        for (int s = 0; s < n; ++s)
          for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
              for (int x2 = 0; x2 < wd; ++x2) {
                const size_t xi = static_cast<size_t>(s) * in_plane +
                                  (static_cast<size_t>(ci) * h + y) * wd + x2;
                for (int oc = 0; oc < o; ++oc) {
                  const T* g = self.grad.data() + static_cast<size_t>(s) * out_plane +
                               static_cast<size_t>(oc) * oh * ow;
                  const size_t wbase = (static_cast<size_t>(ci) * o + oc) * kh * kw;
                  for (int i = 0; i < kh; ++i) {
                    const int ty = y * stride + i - pad;
                    if (ty < 0 || ty >= oh) continue;
                    for (int j = 0; j < kw; ++j) {
                      const int tx = x2 * stride + j - pad;
                      if (tx < 0 || tx >= ow) continue;
                      const T gv = g[static_cast<size_t>(ty) * ow + tx];
                      if (xn->requires_grad)
                        xn->grad[xi] += gv * wn->values[wbase + static_cast<size_t>(i) * kw + j];
                      if (wn->requires_grad)
                        wn->grad[wbase + static_cast<size_t>(i) * kw + j] += gv * xn->values[xi];
                    }
                  }
                }
              }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          for (int s = 0; s < n; ++s)
            for (int oc = 0; oc < o; ++oc) {
              const T* row = self.grad.data() + static_cast<size_t>(s) * out_plane +
                             static_cast<size_t>(oc) * oh * ow;
              double acc = 0.0;
              for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i)
                acc += static_cast<double>(row[i]);
              bn->grad[static_cast<size_t>(oc)] += static_cast<T>(acc);
            }
        }
      });
}

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  return conv2d_transpose(x, w, Tensor<T>(), stride, pad);
}

// Batch normalization over (N, H, W) per channel. Running statistics are plain
// buffers outside the graph; they are updated only when training and
// update_running are both set. Variance uses the biased estimate for
// normalization and the unbiased one for the running buffer.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      std::vector<T>* running_mean, std::vector<T>* running_var, bool training,
                      bool update_running, double momentum = 0.1, double eps = 1e-5) {
  if (x.ndim() != 4) op_error("batchnorm2d", "expected NCHW, got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c)
    op_error("batchnorm2d", "gamma/beta must have shape (" + std::to_string(c) + ")");
  if (!running_mean || !running_var || running_mean->size() != static_cast<size_t>(c) ||
      running_var->size() != static_cast<size_t>(c))
    op_error("batchnorm2d", "running stats must have length " + std::to_string(c));

  const size_t plane = static_cast<size_t>(h) * w;
  const size_t m = static_cast<size_t>(n) * plane;
  const auto& xv = x.values();

  std::vector<T> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
  if (training) {
    for (int ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      for (int s = 0; s < n; ++s) {
        const T* src = xv.data() + (static_cast<size_t>(s) * c + ci) * plane;
        for (size_t i = 0; i < plane; ++i) acc += static_cast<double>(src[i]);
      }
      const double mu = acc / static_cast<double>(m);
      double var_acc = 0.0;
      for (int s = 0; s < n; ++s) {
        const T* src = xv.data() + (static_cast<size_t>(s) * c + ci) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(src[i]) - mu;
          var_acc += d * d;
        }
      }
      const double var = var_acc / static_cast<double>(m);
      mean[static_cast<size_t>(ci)] = static_cast<T>(mu);
      inv_std[static_cast<size_t>(ci)] = static_cast<T>(1.0 / std::sqrt(var + eps));
      if (update_running) {
        const double unbiased = m > 1 ? var_acc / static_cast<double>(m - 1) : var;
        auto& rm = (*running_mean)[static_cast<size_t>(ci)];
        auto& rv = (*running_var)[static_cast<size_t>(ci)];
        rm = static_cast<T>((1.0 - momentum) * static_cast<double>(rm) + momentum * mu);
        rv = static_cast<T>((1.0 - momentum) * static_cast<double>(rv) + momentum * unbiased);
      }
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mean[static_cast<size_t>(ci)] = (*running_mean)[static_cast<size_t>(ci)];
      inv_std[static_cast<size_t>(ci)] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>((*running_var)[static_cast<size_t>(ci)]) + eps));
    }
  }

  std::vector<T> out(x.size());
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci) {
      const T* src = xv.data() + (static_cast<size_t>(s) * c + ci) * plane;
      T* dst = out.data() + (static_cast<size_t>(s) * c + ci) * plane;
      const T mu = mean[static_cast<size_t>(ci)];
      const T is = inv_std[static_cast<size_t>(ci)];
      const T g = gv[static_cast<size_t>(ci)];
      const T b = bv[static_cast<size_t>(ci)];
      for (size_t i = 0; i < plane; ++i) dst[i] = g * ((src[i] - mu) * is) + b;
    }

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_op<T>(
      x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, mean = std::move(mean), inv_std = std::move(inv_std), n, c, plane, m,
       training](Node<T>& self) {
        for (int ci = 0; ci < c; ++ci) {
          const T mu = mean[static_cast<size_t>(ci)];
          const T is = inv_std[static_cast<size_t>(ci)];
          double sum_g = 0.0, sum_gx = 0.0;
          for (int s = 0; s < n; ++s) {
            const size_t base = (static_cast<size_t>(s) * c + ci) * plane;
            for (size_t i = 0; i < plane; ++i) {
              const double g = static_cast<double>(self.grad[base + i]);
              const double xhat =
                  (static_cast<double>(xn->values[base + i]) - static_cast<double>(mu)) *
                  static_cast<double>(is);
              sum_g += g;
              sum_gx += g * xhat;
            }
          }
          if (gn->requires_grad) {
            gn->ensure_grad();
            gn->grad[static_cast<size_t>(ci)] += static_cast<T>(sum_gx);
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            bn->grad[static_cast<size_t>(ci)] += static_cast<T>(sum_g);
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            const T a = gn->values[static_cast<size_t>(ci)] * is;
            if (training) {
              const T mg = static_cast<T>(sum_g / static_cast<double>(m));
              const T mgx = static_cast<T>(sum_gx / static_cast<double>(m));
              for (int s = 0; s < n; ++s) {
                const size_t base = (static_cast<size_t>(s) * c + ci) * plane;
                for (size_t i = 0; i < plane; ++i) {
                  const T xhat = (xn->values[base + i] - mu) * is;
                  xn->grad[base + i] += a * (self.grad[base + i] - mg - xhat * mgx);
                }
              }
            } else {
              for (int s = 0; s < n; ++s) {
                const size_t base = (static_cast<size_t>(s) * c + ci) * plane;
                for (size_t i = 0; i < plane; ++i) xn->grad[base + i] += a * self.grad[base + i];
              }
            }
          }
        }
      });
}

}  // namespace ccs::ad
