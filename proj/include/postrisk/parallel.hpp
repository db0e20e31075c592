#pragma once

#include <cstddef>
#include <functional>

namespace postrisk {

/// Worker count: POSTRISK_THREADS if set and positive, else hardware concurrency.
unsigned worker_count();

/// Runs body(i) for i in [0, count) on up to worker_count() threads.
/// Iterations are split into contiguous static blocks; callers write results
/// into per-index slots so the outcome never depends on scheduling.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace postrisk
