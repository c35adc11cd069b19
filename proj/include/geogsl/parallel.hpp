#pragma once

#include <cstddef>
#include <functional>

namespace geogsl {

// Worker cap: GEOGSL_THREADS if set (>= 1), otherwise hardware concurrency.
std::size_t worker_threads();

// Runs fn(i) for i in [0, n) on a statically partitioned set of threads.
// Each index is processed exactly once, so work writing to per-index slots
// is deterministic regardless of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace geogsl
