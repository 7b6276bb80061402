#pragma once

// Training losses. Targets and weights are constants; only predictions
// carry gradients. Every loss is averaged over the cells whose weight is
// positive, so cells with zero observability contribute nothing.

#include <array>
#include <cmath>
#include <vector>

#include "rspgrid/ops.hpp"
#include "rspgrid/simworld.hpp"

namespace rspgrid::loss {

using ag::Tensor;

inline constexpr double kLogVarMin = -6.0;
inline constexpr double kLogVarMax = 6.0;

namespace detail {

template <typename T>
Tensor<T> zero_scalar() {
  return Tensor<T>::zeros({1});
}

inline std::size_t positive_count(const std::vector<double>& w) {
  std::size_t n = 0;
  for (double v : w) n += v > 0 ? 1 : 0;
  return n;
}

}  // namespace detail

// Softmax cross-entropy per cell times class weight times cell weight,
// averaged over cells with positive cell weight.
//   logits: [X, Y, C], labels: X*Y class indices, cell_weights: X*Y.
template <typename T>
Tensor<T> weighted_ce_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                           const std::vector<double>& cell_weights, const std::vector<double>& class_weights) {
  ag::detail::require_rank("weighted_ce_loss", logits.shape(), 3);
  const std::size_t cells = logits.dim(0) * logits.dim(1);
  const std::size_t classes = logits.dim(2);
  if (labels.size() != cells || cell_weights.size() != cells || class_weights.size() != classes) {
    throw ag::ShapeError("weighted_ce_loss: expected " + std::to_string(cells) + " labels/weights and " +
                         std::to_string(classes) + " class weights");
  }
  const std::size_t n = detail::positive_count(cell_weights);
  if (n == 0) return detail::zero_scalar<T>();
  std::vector<T> mask(cells * classes, T(0));
  for (std::size_t c = 0; c < cells; ++c) {
    if (!(cell_weights[c] > 0)) continue;
    const int l = labels[c];
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw std::invalid_argument("weighted_ce_loss: label " + std::to_string(l) + " out of range");
    }
    mask[c * classes + l] = static_cast<T>(-class_weights[l] * cell_weights[c] / static_cast<double>(n));
  }
  return ag::sum(ag::mul(ag::log_softmax_last(logits), Tensor<T>::from(logits.shape(), std::move(mask))));
}

// Weighted squared error summed over the vector components per cell,
// averaged over cells with positive weight.
template <typename T>
Tensor<T> velocity_l2_loss(const Tensor<T>& pred, const Tensor<T>& target, const std::vector<double>& cell_weights) {
  if (pred.shape() != target.shape()) ag::shape_mismatch("velocity_l2_loss", pred.shape(), target.shape());
  const std::size_t comps = pred.shape().back();
  const std::size_t cells = pred.numel() / comps;
  if (cell_weights.size() != cells) throw ag::ShapeError("velocity_l2_loss: weight count mismatch");
  const std::size_t n = detail::positive_count(cell_weights);
  if (n == 0) return detail::zero_scalar<T>();
  std::vector<T> w(pred.numel());
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t k = 0; k < comps; ++k) {
      w[c * comps + k] = cell_weights[c] > 0 ? static_cast<T>(cell_weights[c] / static_cast<double>(n)) : T(0);
    }
  }
  return ag::sum(ag::mul(ag::square(ag::sub(pred, target.detach())), Tensor<T>::from(pred.shape(), std::move(w))));
}

// Gaussian negative log-likelihood with one shared variance per cell:
//   (1 / (2 sigma^2)) * |target - mu|^2 + 0.5 * log sigma^2
// with log sigma^2 clamped to [kLogVarMin, kLogVarMax], weighted and
// averaged like velocity_l2_loss.
template <typename T>
Tensor<T> heteroscedastic_loss(const Tensor<T>& mu, const Tensor<T>& log_var, const Tensor<T>& target,
                               const std::vector<double>& cell_weights) {
  if (mu.shape() != target.shape()) ag::shape_mismatch("heteroscedastic_loss", mu.shape(), target.shape());
  ag::Shape lv_shape = mu.shape();
  lv_shape.back() = 1;
  if (log_var.shape() != lv_shape) ag::shape_mismatch("heteroscedastic_loss(log_var)", lv_shape, log_var.shape());
  const std::size_t cells = log_var.numel();
  if (cell_weights.size() != cells) throw ag::ShapeError("heteroscedastic_loss: weight count mismatch");
  const std::size_t n = detail::positive_count(cell_weights);
  if (n == 0) return detail::zero_scalar<T>();
  std::vector<T> w(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    w[c] = cell_weights[c] > 0 ? static_cast<T>(cell_weights[c] / static_cast<double>(n)) : T(0);
  }
  const auto s = ag::clamp(log_var, static_cast<T>(kLogVarMin), static_cast<T>(kLogVarMax));
  const auto sq = ag::sum_last(ag::square(ag::sub(mu, target.detach())));
  const auto per_cell = ag::mul_scalar(ag::add(ag::mul(ag::exp(ag::neg(s)), sq), s), T(0.5));
  return ag::sum(ag::mul(per_cell, Tensor<T>::from(lv_shape, std::move(w))));
}

// Observability weights for the segmentation loss.
inline std::vector<double> observed_weights(const sim::GridFrame& f) {
  return {f.observability.begin(), f.observability.end()};
}

// Velocity cell weights: observability, with cells of nonzero ground-truth
// speed up-weighted by min(cells / nonzero cells, cap).
inline std::vector<double> velocity_weights(const sim::GridFrame& f, double cap) {
  const std::size_t n = f.cells();
  std::size_t moving = 0;
  for (std::size_t c = 0; c < n; ++c) {
    if (f.gt_velocity[2 * c] != 0.0f || f.gt_velocity[2 * c + 1] != 0.0f) ++moving;
  }
  const double up = moving ? std::min(static_cast<double>(n) / static_cast<double>(moving), cap) : 1.0;
  std::vector<double> w(n);
  for (std::size_t c = 0; c < n; ++c) {
    const bool nonzero = f.gt_velocity[2 * c] != 0.0f || f.gt_velocity[2 * c + 1] != 0.0f;
    w[c] = f.observability[c] * (nonzero ? up : 1.0);
  }
  return w;
}

// Inverse-frequency class weights over observed cells of `frames`,
// normalized to mean 1 over the classes that occur. Classes that never
// occur get weight 0.
inline std::array<double, 4> class_weights(const std::vector<const sim::GridFrame*>& frames) {
  std::array<double, 4> count{};
  double total = 0;
  for (const auto* f : frames) {
    for (std::size_t c = 0; c < f->cells(); ++c) {
      if (!(f->observability[c] > 0)) continue;
      count[static_cast<std::size_t>(f->gt_class[c])] += 1;
      total += 1;
    }
  }
  std::array<double, 4> w{};
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    if (count[k] > 0) {
      w[k] = total / count[k];
      sum += w[k];
      ++present;
    }
  }
  if (present == 0) return {1, 1, 1, 1};
  for (auto& v : w) v *= static_cast<double>(present) / sum;
  return w;
}

}  // namespace rspgrid::loss
