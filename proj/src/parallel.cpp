#include "spikewright/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace spikewright {

namespace {
int g_default_threads = omp_get_max_threads();
}

void set_thread_limit(int threads) {
  omp_set_num_threads(threads > 0 ? threads : g_default_threads);
}

void apply_thread_env() {
  if (const char* env = std::getenv("SPIKEWRIGHT_THREADS")) {
    try {
      set_thread_limit(std::stoi(env));
    } catch (const std::exception&) {
      // unparsable values leave the default in place
    }
  }
}

int thread_limit() { return omp_get_max_threads(); }

}  // namespace spikewright
