#pragma once

// Index-parallel loop over independent jobs. Exceptions thrown by a job are
// captured and the one with the lowest index is rethrown after the loop.

#include <cstddef>
#include <exception>
#include <vector>

namespace eolt::detail {

template <class Fn>
void parallel_jobs(std::size_t n, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace eolt::detail
