#pragma once

#include <cstdint>
#include <string>

#include "eolt/ops.hpp"

namespace eolt {

struct GradCheckReport {
  std::string stage;
  double max_rel_error = 0.0;
  int probes = 0;
  bool skipped = false;  // straight-through stage, not tested numerically
  bool passed = false;
  std::string note;
};

struct GradCheckOptions {
  int probes = 8;
  double tolerance = 1e-5;
  double step = 1e-6;
  std::uint64_t seed = 0;
};

/// Compares <vjp(u), v> against the central difference of <u, f(x + h v)>
/// for random probe directions v and upstream gradients u. The relative
/// error per probe is |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport finite_diff_check(const DiffStage& stage, const Tensor& input, const GradCheckOptions& opts = {});

}  // namespace eolt
