#pragma once

#include <cmath>

#include "eolt/rng.hpp"
#include "eolt/tensor.hpp"

namespace eolt::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor({3, h, w}, rng, 0.05, 0.95);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) { return max_abs(a - b); }

}  // namespace eolt::testing
