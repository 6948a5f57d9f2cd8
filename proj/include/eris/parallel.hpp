#pragma once

#include <cstddef>
#include <functional>

namespace eris {

/// Worker cap from ERIS_THREADS (>= 1); defaults to the hardware concurrency.
std::size_t worker_threads();

/// Runs fn(i) for i in [0, n). Work items must write to disjoint outputs;
/// callers reduce results in index order so output never depends on the
/// thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace eris
