#pragma once

// Finite-difference checks over every differentiable stage in the library:
// primitive ops, all sub-policies of the catalog, the surrogate networks and
// both policy backbones.

#include <cstdint>
#include <functional>
#include <vector>

#include "eolt/gradcheck.hpp"

namespace eolt {

struct GradientSuiteOptions {
  std::size_t height = 16;
  std::size_t width = 16;
  GradCheckOptions check;
  /// Called after each stage, e.g. for progress output.
  std::function<void(const GradCheckReport&)> on_report;
};

std::vector<GradCheckReport> run_gradient_suite(const GradientSuiteOptions& options = {});

}  // namespace eolt
