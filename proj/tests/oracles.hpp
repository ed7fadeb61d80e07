#pragma once

// Reference implementations used as independent oracles by the tests and the
// acceptance binary.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "eolt/transforms.hpp"

namespace eolt::oracle {

/// The capped distribution is q_i = min(c, s * p_i) with the scale s chosen
/// so that q sums to 1. Finds s by bisection.
inline std::vector<double> water_fill(std::span<const double> p, double c) {
  auto mass = [&](double s) {
    double m = 0.0;
    for (double v : p) m += std::min(c, s * v);
    return m;
  };
  double lo = 0.0, hi = 1.0;
  while (mass(hi) < 1.0 && hi < 1e300) hi *= 2.0;
  for (int it = 0; it < 2000 && lo < hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (mass(mid) < 1.0 ? lo : hi) = mid;
  }
  std::vector<double> q(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) q[i] = std::min(c, hi * p[i]);
  return q;
}

inline double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Category means by direct enumeration: column 0 is `clean`, columns 1..6
/// follow kCategories, column 7 averages the non-empty categories.
inline std::array<double, 8> category_row(double clean, std::span<const TransformId> transforms,
                                          std::span<const double> cells) {
  std::array<double, 8> row{};
  row.fill(std::numeric_limits<double>::quiet_NaN());
  row[0] = clean;
  double overall = 0.0;
  int used = 0;
  for (std::size_t c = 0; c < kCategories.size(); ++c) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t k = 0; k < transforms.size(); ++k)
      if (category_of(transforms[k]) == kCategories[c]) {
        sum += cells[k];
        ++n;
      }
    if (n == 0) continue;
    row[1 + c] = sum / n;
    overall += row[1 + c];
    ++used;
  }
  if (used > 0) row[7] = overall / used;
  return row;
}

}  // namespace eolt::oracle
