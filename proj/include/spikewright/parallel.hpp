#pragma once

#include <cstddef>

namespace spikewright {

/// Caps worker threads; 0 restores the runtime default.
void set_thread_limit(int threads);

/// Applies the SPIKEWRIGHT_THREADS environment variable, if set.
void apply_thread_env();

int thread_limit();

/// Runs body(i) for i in [0, n). Iterations must be independent and must not
/// throw; results that need reducing are written to per-iteration slots and
/// reduced by the caller in index order, so output is independent of the
/// thread count.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
}

}  // namespace spikewright
