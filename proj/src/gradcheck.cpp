#include "eolt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "eolt/errors.hpp"
#include "eolt/rng.hpp"

namespace eolt {

namespace {

Tensor random_like(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.storage()) v = rng.normal();
  return t;
}

}  // namespace

GradCheckReport finite_diff_check(const DiffStage& stage, const Tensor& input, const GradCheckOptions& opts) {
  if (opts.probes < 1) throw std::invalid_argument("finite_diff_check: probes must be >= 1");
  GradCheckReport report;
  report.stage = stage.name();
  if (stage.straight_through()) {
    report.skipped = true;
    report.passed = true;
    report.note = "identity-gradient, skipped";
    return report;
  }

  Rng rng(opts.seed);
  Context ctx;
  const Tensor out = stage.forward(input, ctx);
  for (int p = 0; p < opts.probes; ++p) {
    const Tensor v = random_like(input.shape(), rng);
    const Tensor u = random_like(out.shape(), rng);
    const Tensor g = stage.vjp(ctx, u);
    if (!g.same_shape(input)) {
      report.note = "vjp shape " + shape_str(g.shape()) + " differs from input " + shape_str(input.shape());
      return report;
    }
    const double analytic = dot(g, v);
    const double plus = dot(u, stage(input + opts.step * v));
    const double minus = dot(u, stage(input - opts.step * v));
    const double numeric = (plus - minus) / (2.0 * opts.step);
    if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
      report.note = "non-finite value at probe " + std::to_string(p);
      report.max_rel_error = INFINITY;
      report.probes = p + 1;
      return report;
    }
    const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    report.max_rel_error = std::max(report.max_rel_error, err);
    report.probes = p + 1;
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

}  // namespace eolt
