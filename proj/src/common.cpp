#include "vcnn/common.hpp"

#include <cstdlib>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vcnn {

int configured_threads() {
  if (const char* env = std::getenv("VCNN_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

void apply_thread_config() {
#ifdef _OPENMP
  omp_set_num_threads(configured_threads());
  omp_set_nested(0);
#endif
}

}  // namespace vcnn
