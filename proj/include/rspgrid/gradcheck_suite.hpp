#pragma once

// Finite-difference checks for every differentiable building block, grouped
// by module, in double precision on an 8x8 grid.

#include <string>
#include <vector>

#include "rspgrid/gradcheck.hpp"

namespace rspgrid::gradcheck {

inline constexpr double kLayerTolerance = 1e-4;
inline constexpr double kUnrolledTolerance = 1e-3;

struct CaseResult {
  std::string module;
  std::string name;
  ag::GradCheckReport report;
  double tolerance = kLayerTolerance;
  double seconds = 0;

  bool ok() const { return report.ok(tolerance); }
};

// Module names accepted by run().
const std::vector<std::string>& modules();

// Runs every case of `module`, or all modules when empty. Throws
// std::invalid_argument for an unknown module name.
std::vector<CaseResult> run(const std::string& module = "");

}  // namespace rspgrid::gradcheck
