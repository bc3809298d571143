#include "famt/parallel.hpp"

#include <omp.h>

namespace famt {

void set_workers(int workers) {
  if (workers > 0) omp_set_num_threads(workers);
}

int worker_count() { return omp_get_max_threads(); }

}  // namespace famt
