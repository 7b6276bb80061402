#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>

namespace rspgrid {

// Grid extent, metric cell size and sensor frame rate.
struct GridGeometry {
  std::size_t x = 48;
  std::size_t y = 48;
  double resolution_m = 0.5;
  double frame_rate_hz = 10.0;

  void validate() const {
    if (x == 0 || y == 0) throw std::invalid_argument("grid geometry: cell counts must be positive");
    if (!(resolution_m > 0.0)) throw std::invalid_argument("grid geometry: resolution must be positive");
    if (!(frame_rate_hz > 0.0)) throw std::invalid_argument("grid geometry: frame rate must be positive");
  }

  std::size_t cells() const { return x * y; }

  // Largest admissible offset magnitude in meters.
  double off_max() const { return 0.45 * static_cast<double>(std::min(x, y)) * resolution_m; }

  bool operator==(const GridGeometry&) const = default;
};

}  // namespace rspgrid
