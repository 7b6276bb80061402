#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rspgrid/autograd.hpp"

namespace rspgrid::ag {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
  // Set when a value or gradient is not finite; names the coordinate.
  std::optional<std::string> failure;

  bool ok(double tolerance) const { return !failure && max_rel_error < tolerance; }
};

// One coordinate of one leaf.
struct Coordinate {
  std::size_t input;
  std::size_t index;
};

// Compares the analytic gradient of a scalar function of `leaves` against
// central differences. The relative error per coordinate is
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
// `coords` restricts the check to a subset; empty means every coordinate.
//
// With several step sizes, each coordinate keeps the smallest error over
// the steps. Small steps lose digits where the gradient is tiny relative to
// the function value; large steps may cross a kink of a piecewise-linear
// activation. A wrong analytic gradient disagrees at every step.
inline GradCheckReport finite_diff_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> leaves,
                                         const std::vector<double>& epsilons,
                                         const std::vector<Coordinate>& coords = {}) {
  if (epsilons.empty()) throw std::invalid_argument("finite_diff_check: no step sizes");
  for (double e : epsilons) {
    if (!(e > 0.0)) throw std::invalid_argument("finite_diff_check: epsilon must be positive");
  }
  GradCheckReport report;
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  const Tensor<double> out = f();
  if (out.numel() != 1) throw ShapeError("finite_diff_check: function is not scalar, shape " + shape_str(out.shape()));
  if (!std::isfinite(out.item())) {
    report.failure = "function value is not finite at the base point";
    return report;
  }
  backward(out);

  std::vector<Coordinate> todo = coords;
  if (todo.empty()) {
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      for (std::size_t i = 0; i < leaves[l].numel(); ++i) todo.push_back({l, i});
    }
  }

  NoGradGuard no_grad;
  for (const auto& c : todo) {
    auto& leaf = leaves.at(c.input);
    const double analytic = leaf.has_grad() ? leaf.grad()[c.index] : 0.0;
    auto values = leaf.mutable_data();
    const double saved = values[c.index];
    double err = std::numeric_limits<double>::infinity();
    for (double epsilon : epsilons) {
      values[c.index] = saved + epsilon;
      const double plus = f().item();
      values[c.index] = saved - epsilon;
      const double minus = f().item();
      values[c.index] = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
        report.failure = "non-finite gradient at input " + std::to_string(c.input) + " index " + std::to_string(c.index);
        report.worst_input = c.input;
        report.worst_index = c.index;
        return report;
      }
      err = std::min(err, std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric)));
    }
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_input = c.input;
      report.worst_index = c.index;
    }
    ++report.coordinates_checked;
  }
  return report;
}

inline GradCheckReport finite_diff_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> leaves,
                                         double epsilon, const std::vector<Coordinate>& coords = {}) {
  return finite_diff_check(f, std::move(leaves), std::vector<double>{epsilon}, coords);
}

}  // namespace rspgrid::ag
