#pragma once

#include <cstddef>
#include <functional>

namespace hpf {

/// Worker count: HPF_THREADS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t thread_count();

/// Runs body(i) for i in [0, n) on up to thread_count() threads. Iterations
/// are split into contiguous blocks, so results written by index are
/// independent of the thread count. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace hpf
