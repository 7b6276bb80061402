#pragma once

// Differentiable primitives. Spatial tensors are channels-last: [X, Y, C].

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rspgrid/autograd.hpp"

namespace rspgrid::ag {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) shape_mismatch(op, a, b);
}

inline void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

template <typename T>
bool wants(const NodePtr<T>& n) {
  return n->requires_grad;
}

// Elementwise unary op whose derivative is expressed through (x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D dfdx) {
  std::vector<T> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result(op, a.shape(), std::move(out), {&a}, [dfdx](Node<T>& self) {
    auto& in = *self.inputs[0];
    T* g = in.grad_data();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      g[i] += self.grad[i] * dfdx(in.value[i], self.value[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary (identical shapes)

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("add", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      T* g = in.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("sub", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      T* g = self.inputs[0]->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      T* g = self.inputs[1]->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("mul", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    auto& l = *self.inputs[0];
    auto& r = *self.inputs[1];
    if (l.requires_grad) {
      T* g = l.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * r.value[i];
    }
    if (r.requires_grad) {
      T* g = r.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * l.value[i];
    }
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("div", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / y[i];
  return make_result("div", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    auto& l = *self.inputs[0];
    auto& r = *self.inputs[1];
    if (l.requires_grad) {
      T* g = l.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / r.value[i];
    }
    if (r.requires_grad) {
      T* g = r.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i] * self.value[i] / r.value[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Scalar ops

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return detail::unary("mul_scalar", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> div_scalar(const Tensor<T>& a, T s) {
  return detail::unary("div_scalar", a, [s](T x) { return x / s; }, [s](T, T) { return T(1) / s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

// ---------------------------------------------------------------------------
// Unary nonlinearities

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary("sigmoid", a, [](T x) { return sigmoid_scalar(x); },
                       [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary("tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  return detail::unary("leaky_relu", a, [slope](T x) { return x > T(0) ? x : slope * x; },
                       [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

// Gradient passes where lo <= x <= hi.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary("clamp", a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
                       [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
  return clamp(a, lo, std::numeric_limits<T>::infinity());
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) shape_mismatch("reshape", a.shape(), shape);
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {&a}, [](Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// Expands size-1 dimensions to `shape`; ranks must agree.
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& shape) {
  const Shape& src = a.shape();
  if (src.size() != shape.size()) shape_mismatch("broadcast_to", src, shape);
  for (std::size_t d = 0; d < src.size(); ++d) {
    if (src[d] != shape[d] && src[d] != 1) shape_mismatch("broadcast_to", src, shape);
  }
  if (src == shape) return a;
  const std::size_t rank = shape.size();
  const std::size_t n = numel(shape);
  // Source index for every output index.
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> out_stride(rank), src_stride(rank);
  std::size_t os = 1, ss = 1;
  for (std::size_t d = rank; d-- > 0;) {
    out_stride[d] = os;
    src_stride[d] = src[d] == 1 ? 0 : ss;
    os *= shape[d];
    ss *= src[d];
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rem = i, si = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      const std::size_t c = rem / out_stride[d];
      rem -= c * out_stride[d];
      si += c * src_stride[d];
    }
    index[i] = si;
  }
  std::vector<T> out(n);
  const auto x = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[index[i]];
  return make_result("broadcast_to", shape, std::move(out), {&a}, [index = std::move(index)](Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
  });
}

// Concatenation along the last axis. All leading dimensions must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    const std::size_t c = l.back();
    l.pop_back();
    if (l != lead) shape_mismatch("concat", parts[0].shape(), p.shape());
    widths.push_back(c);
    total += c;
  }
  const std::size_t rows = numel(lead);
  std::vector<T> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto x = parts[k].data();
    const std::size_t w = widths[k];
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(x.data() + r * w, w, out.data() + r * total + offset);
    }
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  return make_result_v<T>("concat", shape, std::move(out), parts, [widths, rows, total](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t w = widths[k];
      if (self.inputs[k]->requires_grad) {
        T* g = self.inputs[k]->grad_data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* src = self.grad.data() + r * total + off;
          for (std::size_t c = 0; c < w; ++c) g[r * w + c] += src[c];
        }
      }
      off += w;
    }
  });
}

// Channels [begin, end) of the last axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  const std::size_t c = a.shape().back();
  if (begin >= end || end > c) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of bounds for " + shape_str(a.shape()));
  }
  const std::size_t rows = a.numel() / c;
  const std::size_t w = end - begin;
  std::vector<T> out(rows * w);
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data() + r * c + begin, w, out.data() + r * w);
  Shape shape = a.shape();
  shape.back() = w;
  return make_result("slice", shape, std::move(out), {&a}, [rows, c, w, begin](Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < w; ++k) g[r * c + begin + k] += self.grad[r * w + k];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.data()) s += v;
  return make_result("sum", {1}, {s}, {&a}, [](Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    const T gs = self.grad[0];
    for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += gs;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

// Sum over the last axis, keeping it with size 1.
template <typename T>
Tensor<T> sum_last(const Tensor<T>& a) {
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  std::vector<T> out(rows, T(0));
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T s = T(0);
    for (std::size_t k = 0; k < c; ++k) s += x[r * c + k];
    out[r] = s;
  }
  Shape shape = a.shape();
  shape.back() = 1;
  return make_result("sum_last", shape, std::move(out), {&a}, [rows, c](Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < c; ++k) g[r * c + k] += self.grad[r];
    }
  });
}

// Numerically stable log-softmax over the last axis.
template <typename T>
Tensor<T> log_softmax_last(const Tensor<T>& a) {
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  std::vector<T> out(a.numel());
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * c;
    T m = xr[0];
    for (std::size_t k = 1; k < c; ++k) m = std::max(m, xr[k]);
    T s = T(0);
    for (std::size_t k = 0; k < c; ++k) s += std::exp(xr[k] - m);
    const T lse = m + std::log(s);
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] = xr[k] - lse;
  }
  return make_result("log_softmax", a.shape(), std::move(out), {&a}, [rows, c](Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gy = self.grad.data() + r * c;
      const T* y = self.value.data() + r * c;
      T gs = T(0);
      for (std::size_t k = 0; k < c; ++k) gs += gy[k];
      for (std::size_t k = 0; k < c; ++k) g[r * c + k] += gy[k] - std::exp(y[k]) * gs;
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("matmul", a.shape(), 2);
  detail::require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_mismatch("matmul", a.shape(), b.shape());
  std::vector<T> out(m * n);
  detail::MapMat<T>(out.data(), m, n).noalias() =
      detail::CMapMat<T>(a.data().data(), m, k) * detail::CMapMat<T>(b.data().data(), k, n);
  return make_result("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node<T>& self) {
    auto& l = *self.inputs[0];
    auto& r = *self.inputs[1];
    detail::CMapMat<T> gy(self.grad.data(), m, n);
    if (l.requires_grad) {
      detail::MapMat<T>(l.grad_data(), m, k).noalias() += gy * detail::CMapMat<T>(r.value.data(), k, n).transpose();
    }
    if (r.requires_grad) {
      detail::MapMat<T>(r.grad_data(), k, n).noalias() += detail::CMapMat<T>(l.value.data(), m, k).transpose() * gy;
    }
  });
}

namespace detail {

// Patch matrix [X*Y, k*k*C] for a stride-1, zero-padded "same" convolution.
template <typename T>
void im2col(const T* x, std::size_t nx, std::size_t ny, std::size_t c, std::size_t k, std::size_t dilation,
            T* cols) {
  const long r = static_cast<long>(k / 2);
  const long d = static_cast<long>(dilation);
  const std::size_t kk = k * k * c;
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      T* row = cols + (i * ny + j) * kk;
      for (std::size_t ki = 0; ki < k; ++ki) {
        const long si = static_cast<long>(i) + (static_cast<long>(ki) - r) * d;
        for (std::size_t kj = 0; kj < k; ++kj) {
          const long sj = static_cast<long>(j) + (static_cast<long>(kj) - r) * d;
          T* dst = row + (ki * k + kj) * c;
          if (si < 0 || sj < 0 || si >= static_cast<long>(nx) || sj >= static_cast<long>(ny)) {
            std::fill_n(dst, c, T(0));
          } else {
            std::copy_n(x + (static_cast<std::size_t>(si) * ny + static_cast<std::size_t>(sj)) * c, c, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t nx, std::size_t ny, std::size_t c, std::size_t k, std::size_t dilation,
                T* dx) {
  const long r = static_cast<long>(k / 2);
  const long d = static_cast<long>(dilation);
  const std::size_t kk = k * k * c;
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      const T* row = cols + (i * ny + j) * kk;
      for (std::size_t ki = 0; ki < k; ++ki) {
        const long si = static_cast<long>(i) + (static_cast<long>(ki) - r) * d;
        if (si < 0 || si >= static_cast<long>(nx)) continue;
        for (std::size_t kj = 0; kj < k; ++kj) {
          const long sj = static_cast<long>(j) + (static_cast<long>(kj) - r) * d;
          if (sj < 0 || sj >= static_cast<long>(ny)) continue;
          const T* src = row + (ki * k + kj) * c;
          T* dst = dx + (static_cast<std::size_t>(si) * ny + static_cast<std::size_t>(sj)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, stride 1, "same" zero padding.
//   x: [X, Y, Cin], weight: [k, k, Cin, Cout] (k odd), bias: [Cout] or undefined.
// Implemented as patch extraction followed by a matrix product; patches are
// rebuilt in the backward pass instead of being kept alive with the graph.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t dilation = 1) {
  detail::require_rank("conv2d(input)", x.shape(), 3);
  detail::require_rank("conv2d(weight)", weight.shape(), 4);
  const std::size_t nx = x.dim(0), ny = x.dim(1), cin = x.dim(2);
  const std::size_t k = weight.dim(0), cout = weight.dim(3);
  if (weight.dim(1) != k || k % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square and odd, got " + shape_str(weight.shape()));
  }
  if (weight.dim(2) != cin) shape_mismatch("conv2d", x.shape(), weight.shape());
  if (dilation == 0) throw ShapeError("conv2d: dilation must be positive");
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{cout}) shape_mismatch("conv2d(bias)", weight.shape(), bias.shape());

  const std::size_t n = nx * ny;
  const std::size_t kk = k * k * cin;
  std::vector<T> out(n * cout);
  detail::MapMat<T> y(out.data(), n, cout);
  detail::CMapMat<T> w(weight.data().data(), kk, cout);
  if (k == 1) {
    y.noalias() = detail::CMapMat<T>(x.data().data(), n, cin) * w;
  } else {
    std::vector<T> cols(n * kk);
    detail::im2col(x.data().data(), nx, ny, cin, k, dilation, cols.data());
    y.noalias() = detail::CMapMat<T>(cols.data(), n, kk) * w;
  }
  if (has_bias) {
    const T* b = bias.data().data();
    for (std::size_t r = 0; r < n; ++r) {
      T* row = out.data() + r * cout;
      for (std::size_t c = 0; c < cout; ++c) row[c] += b[c];
    }
  }

  auto back = [nx, ny, cin, k, cout, dilation, has_bias](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& wt = *self.inputs[1];
    const std::size_t n = nx * ny;
    const std::size_t kk = k * k * cin;
    detail::CMapMat<T> gy(self.grad.data(), n, cout);
    if (has_bias && self.inputs[2]->requires_grad) {
      T* gb = self.inputs[2]->grad_data();
      for (std::size_t r = 0; r < n; ++r) {
        const T* row = self.grad.data() + r * cout;
        for (std::size_t c = 0; c < cout; ++c) gb[c] += row[c];
      }
    }
    if (k == 1) {
      if (wt.requires_grad) {
        detail::MapMat<T>(wt.grad_data(), kk, cout).noalias() +=
            detail::CMapMat<T>(in.value.data(), n, cin).transpose() * gy;
      }
      if (in.requires_grad) {
        detail::MapMat<T>(in.grad_data(), n, cin).noalias() +=
            gy * detail::CMapMat<T>(wt.value.data(), kk, cout).transpose();
      }
      return;
    }
    std::vector<T> cols(n * kk);
    if (wt.requires_grad) {
      detail::im2col(in.value.data(), nx, ny, cin, k, dilation, cols.data());
      detail::MapMat<T>(wt.grad_data(), kk, cout).noalias() +=
          detail::CMapMat<T>(cols.data(), n, kk).transpose() * gy;
    }
    if (in.requires_grad) {
      detail::MapMat<T>(cols.data(), n, kk).noalias() = gy * detail::CMapMat<T>(wt.value.data(), kk, cout).transpose();
      detail::col2im_add(cols.data(), nx, ny, cin, k, dilation, in.grad_data());
    }
  };
  Shape shape{nx, ny, cout};
  if (has_bias) return make_result("conv2d", shape, std::move(out), {&x, &weight, &bias}, back);
  return make_result("conv2d", shape, std::move(out), {&x, &weight}, back);
}

// ---------------------------------------------------------------------------
// Resampling on [X, Y, C]

// 2x2 mean pooling with stride 2; X and Y must be even.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  detail::require_rank("avg_pool2", x.shape(), 3);
  const std::size_t nx = x.dim(0), ny = x.dim(1), c = x.dim(2);
  if (nx % 2 || ny % 2) throw ShapeError("avg_pool2: odd spatial size " + shape_str(x.shape()));
  const std::size_t ox = nx / 2, oy = ny / 2;
  std::vector<T> out(ox * oy * c, T(0));
  const auto v = x.data();
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      const T* src = v.data() + (i * ny + j) * c;
      T* dst = out.data() + ((i / 2) * oy + j / 2) * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += T(0.25) * src[k];
    }
  }
  return make_result("avg_pool2", {ox, oy, c}, std::move(out), {&x}, [nx, ny, c, oy](Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < nx; ++i) {
      for (std::size_t j = 0; j < ny; ++j) {
        const T* src = self.grad.data() + ((i / 2) * oy + j / 2) * c;
        T* dst = g + (i * ny + j) * c;
        for (std::size_t k = 0; k < c; ++k) dst[k] += T(0.25) * src[k];
      }
    }
  });
}

// Nearest-neighbour upsampling by an integer factor.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
  detail::require_rank("upsample_nearest", x.shape(), 3);
  const std::size_t nx = x.dim(0), ny = x.dim(1), c = x.dim(2);
  const std::size_t ox = nx * factor, oy = ny * factor;
  std::vector<T> out(ox * oy * c);
  const auto v = x.data();
  for (std::size_t i = 0; i < ox; ++i) {
    for (std::size_t j = 0; j < oy; ++j) {
      std::copy_n(v.data() + ((i / factor) * ny + j / factor) * c, c, out.data() + (i * oy + j) * c);
    }
  }
  return make_result("upsample_nearest", {ox, oy, c}, std::move(out), {&x}, [ny, c, ox, oy, factor](Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < ox; ++i) {
      for (std::size_t j = 0; j < oy; ++j) {
        const T* src = self.grad.data() + (i * oy + j) * c;
        T* dst = g + ((i / factor) * ny + j / factor) * c;
        for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Operator sugar for readability in model code.

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// Multiplies [.., C] by a per-row factor [.., 1].
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& factor) {
  return mul(x, broadcast_to(factor, x.shape()));
}

}  // namespace rspgrid::ag
