#pragma once

#include <cstddef>
#include <exception>

namespace famt {

// Sets the OpenMP team size used by every parallel region (0 keeps the
// runtime default).
void set_workers(int workers);
int worker_count();

// Runs body(i) for i in [0, n) across OpenMP threads. Iterations must only
// write state owned by index i. The first exception thrown by any iteration
// is rethrown on the calling thread after the loop.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  std::exception_ptr error;
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long long i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(famt_parallel_for_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace famt
