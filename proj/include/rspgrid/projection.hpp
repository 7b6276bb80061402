#pragma once

// Forward warping of recurrent state by per-cell metric offsets.
//
// Every source cell emits its payload to the (up to) four cells surrounding
// its displaced center with bilinear weights. Contributions are summed per
// target cell in row-major source order, alongside the received weight
// ("mass"). Splats landing outside the grid are dropped.

#include <cmath>
#include <stdexcept>
#include <string>

#include "rspgrid/geometry.hpp"
#include "rspgrid/ops.hpp"

namespace rspgrid::proj {

using ag::Shape;
using ag::Tensor;

enum class Collision { sum, mean };

template <typename T>
struct Projected {
  Tensor<T> payload;  // [X, Y, C]
  Tensor<T> mass;     // [X, Y, 1]
};

namespace detail {

// Splat with the mass appended as an extra trailing channel: [X, Y, C + 1].
template <typename T>
Tensor<T> splat(const Tensor<T>& payload, const Tensor<T>& off, double resolution) {
  const std::size_t nx = payload.dim(0), ny = payload.dim(1), c = payload.dim(2);
  const std::size_t oc = c + 1;
  std::vector<T> out(nx * ny * oc, T(0));
  const T* p = payload.data().data();
  const T* o = off.data().data();
  const T inv_res = static_cast<T>(1.0 / resolution);
  const long lx = static_cast<long>(nx), ly = static_cast<long>(ny);

  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      const std::size_t s = i * ny + j;
      const T tx = static_cast<T>(i) + o[2 * s] * inv_res;
      const T ty = static_cast<T>(j) + o[2 * s + 1] * inv_res;
      const T fx0 = std::floor(tx), fy0 = std::floor(ty);
      const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
      const T fx = tx - fx0, fy = ty - fy0;
      const T* src = p + s * c;
      for (int a = 0; a < 2; ++a) {
        const long xt = x0 + a;
        if (xt < 0 || xt >= lx) continue;
        const T wx = a ? fx : T(1) - fx;
        for (int b = 0; b < 2; ++b) {
          const long yt = y0 + b;
          if (yt < 0 || yt >= ly) continue;
          const T w = wx * (b ? fy : T(1) - fy);
          if (w == T(0)) continue;
          T* dst = out.data() + (static_cast<std::size_t>(xt) * ny + static_cast<std::size_t>(yt)) * oc;
          for (std::size_t k = 0; k < c; ++k) dst[k] += w * src[k];
          dst[c] += w;
        }
      }
    }
  }

  return ag::make_result(
      "project_state", {nx, ny, oc}, std::move(out), {&payload, &off}, [nx, ny, c, inv_res](ag::Node<T>& self) {
        auto& pin = *self.inputs[0];
        auto& oin = *self.inputs[1];
        const std::size_t oc = c + 1;
        const long lx = static_cast<long>(nx), ly = static_cast<long>(ny);
        T* gp = pin.requires_grad ? pin.grad_data() : nullptr;
        T* go = oin.requires_grad ? oin.grad_data() : nullptr;
        const T* p = pin.value.data();
        const T* o = oin.value.data();
        for (std::size_t i = 0; i < nx; ++i) {
          for (std::size_t j = 0; j < ny; ++j) {
            const std::size_t s = i * ny + j;
            const T tx = static_cast<T>(i) + o[2 * s] * inv_res;
            const T ty = static_cast<T>(j) + o[2 * s + 1] * inv_res;
            const T fx0 = std::floor(tx), fy0 = std::floor(ty);
            const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
            const T fx = tx - fx0, fy = ty - fy0;
            const T* src = p + s * c;
            T dfx = T(0), dfy = T(0);
            for (int a = 0; a < 2; ++a) {
              const long xt = x0 + a;
              if (xt < 0 || xt >= lx) continue;
              const T wx = a ? fx : T(1) - fx;
              const T dwx = a ? T(1) : T(-1);
              for (int b = 0; b < 2; ++b) {
                const long yt = y0 + b;
                if (yt < 0 || yt >= ly) continue;
                const T wy = b ? fy : T(1) - fy;
                const T dwy = b ? T(1) : T(-1);
                const T* gt = self.grad.data() + (static_cast<std::size_t>(xt) * ny + static_cast<std::size_t>(yt)) * oc;
                if (gp) {
                  const T w = wx * wy;
                  for (std::size_t k = 0; k < c; ++k) gp[s * c + k] += w * gt[k];
                }
                if (go) {
                  T dot = gt[c];
                  for (std::size_t k = 0; k < c; ++k) dot += gt[k] * src[k];
                  dfx += dot * dwx * wy;
                  dfy += dot * wx * dwy;
                }
              }
            }
            if (go) {
              go[2 * s] += dfx * inv_res;
              go[2 * s + 1] += dfy * inv_res;
            }
          }
        }
      });
}

// Rescales each trailing-axis vector whose Euclidean norm exceeds `limit`
// back onto the sphere of radius `limit`.
template <typename T>
Tensor<T> clamp_norm_last(const Tensor<T>& x, T limit) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < rows; ++r) {
    T n2 = T(0);
    for (std::size_t k = 0; k < c; ++k) n2 += out[r * c + k] * out[r * c + k];
    const T n = std::sqrt(n2);
    if (n > limit) {
      const T s = limit / n;
      for (std::size_t k = 0; k < c; ++k) out[r * c + k] *= s;
    }
  }
  return ag::make_result("clamp_norm", x.shape(), std::move(out), {&x}, [rows, c, limit](ag::Node<T>& self) {
    auto& in = *self.inputs[0];
    T* g = in.grad_data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xv = in.value.data() + r * c;
      const T* gy = self.grad.data() + r * c;
      T n2 = T(0);
      for (std::size_t k = 0; k < c; ++k) n2 += xv[k] * xv[k];
      const T n = std::sqrt(n2);
      if (n > limit) {
        // d(limit * x / |x|) = limit / |x| * (I - x x^T / |x|^2)
        T xg = T(0);
        for (std::size_t k = 0; k < c; ++k) xg += xv[k] * gy[k];
        const T s = limit / n;
        for (std::size_t k = 0; k < c; ++k) g[r * c + k] += s * (gy[k] - xv[k] * xg / n2);
      } else {
        for (std::size_t k = 0; k < c; ++k) g[r * c + k] += gy[k];
      }
    }
  });
}

}  // namespace detail

template <typename T>
void require_grid(const char* op, const Tensor<T>& t, const GridGeometry& geom, std::size_t channels) {
  if (t.rank() != 3 || t.dim(0) != geom.x || t.dim(1) != geom.y || t.dim(2) != channels) {
    throw ag::ShapeError(std::string(op) + ": expected [" + std::to_string(geom.x) + "," + std::to_string(geom.y) +
                         "," + std::to_string(channels) + "], got " + ag::shape_str(t.shape()));
  }
}

// off = v / FR, limited to |off| <= off_max.
template <typename T>
Tensor<T> velocity_to_offset(const Tensor<T>& velocity, const GridGeometry& geom) {
  geom.validate();
  const auto off = ag::div_scalar(velocity, static_cast<T>(geom.frame_rate_hz));
  return detail::clamp_norm_last(off, static_cast<T>(geom.off_max()));
}

template <typename T>
Tensor<T> offset_to_velocity(const Tensor<T>& off, const GridGeometry& geom) {
  return ag::mul_scalar(off, static_cast<T>(geom.frame_rate_hz));
}

template <typename T>
Tensor<T> clamp_offsets(const Tensor<T>& off, const GridGeometry& geom) {
  return detail::clamp_norm_last(off, static_cast<T>(geom.off_max()));
}

// Splat `payload` [X, Y, C] by `off` [X, Y, 2] (meters). Differentiable with
// respect to both arguments.
template <typename T>
Projected<T> project_state(const Tensor<T>& payload, const Tensor<T>& off, const GridGeometry& geom) {
  geom.validate();
  if (payload.rank() != 3 || payload.dim(0) != geom.x || payload.dim(1) != geom.y) {
    throw ag::ShapeError("project_state: payload " + ag::shape_str(payload.shape()) + " does not match grid " +
                         std::to_string(geom.x) + "x" + std::to_string(geom.y));
  }
  require_grid("project_state(off)", off, geom, 2);
  const std::size_t c = payload.dim(2);
  const auto both = detail::splat(payload, off, geom.resolution_m);
  return {ag::slice(both, 0, c), ag::slice(both, c, c + 1)};
}

// Cells whose received mass is below this count as empty under "mean".
inline constexpr double kMeanMassFloor = 1e-3;

// "sum" leaves the splat untouched; "mean" is the mass-weighted average of
// the contributions, payload / max(mass, kMeanMassFloor).
template <typename T>
Tensor<T> normalize_projection(const Tensor<T>& payload, const Tensor<T>& mass, Collision mode) {
  if (mode == Collision::sum) return payload;
  const auto denom = ag::clamp_min(mass, static_cast<T>(kMeanMassFloor));
  return ag::div(payload, ag::broadcast_to(denom, payload.shape()));
}

// ((k - 1) / 2) cells per frame, in m/s.
inline double max_capturable_speed(std::size_t kernel_size, const GridGeometry& geom) {
  if (kernel_size % 2 == 0) {
    throw std::invalid_argument("max_capturable_speed: kernel size must be odd, got " + std::to_string(kernel_size));
  }
  geom.validate();
  return static_cast<double>((kernel_size - 1) / 2) * geom.resolution_m * geom.frame_rate_hz;
}

}  // namespace rspgrid::proj
