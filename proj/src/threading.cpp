#include "rediffuse/threading.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rediffuse {

void init_threading() {
#ifdef _OPENMP
  const char* env = std::getenv("REDIFFUSE_THREADS");
  if (env && *env) {
    int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace rediffuse
