#pragma once

#include <cmath>
#include <vector>

#include "rspgrid/autograd.hpp"
#include "rspgrid/rng.hpp"

namespace testsupport {

using rspgrid::Rng;
using rspgrid::ag::Shape;
using rspgrid::ag::Tensor;

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                                    bool requires_grad = false) {
  std::vector<double> v(rspgrid::ag::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(shape, std::move(v), requires_grad);
}

// Channels-last index into [X, Y, C].
inline std::size_t at(std::size_t i, std::size_t j, std::size_t k, std::size_t ny, std::size_t nc) {
  return (i * ny + j) * nc + k;
}

// Direct nested-loop "same" convolution, weight [k, k, cin, cout].
inline std::vector<double> naive_conv(const std::vector<double>& x, std::size_t nx, std::size_t ny, std::size_t cin,
                                      const std::vector<double>& w, std::size_t k, std::size_t cout,
                                      const std::vector<double>& b, std::size_t dilation = 1) {
  std::vector<double> out(nx * ny * cout, 0.0);
  const long r = static_cast<long>(k / 2);
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = b.empty() ? 0.0 : b[o];
        for (long di = -r; di <= r; ++di)
          for (long dj = -r; dj <= r; ++dj) {
            const long si = static_cast<long>(i) + di * static_cast<long>(dilation);
            const long sj = static_cast<long>(j) + dj * static_cast<long>(dilation);
            if (si < 0 || sj < 0 || si >= static_cast<long>(nx) || sj >= static_cast<long>(ny)) continue;
            for (std::size_t c = 0; c < cin; ++c) {
              const std::size_t wi = ((static_cast<std::size_t>(di + r) * k + static_cast<std::size_t>(dj + r)) * cin + c) * cout + o;
              acc += w[wi] * x[at(static_cast<std::size_t>(si), static_cast<std::size_t>(sj), c, ny, cin)];
            }
          }
        out[at(i, j, o, ny, cout)] = acc;
      }
  return out;
}

inline double leaky(double v) { return v > 0 ? v : 0.1 * v; }
inline double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testsupport
