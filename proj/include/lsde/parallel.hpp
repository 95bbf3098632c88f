#pragma once

#include <cstddef>
#include <functional>

namespace lsde {

/// Worker count from LSDE_THREADS, else the available hardware parallelism.
std::size_t default_workers();

/// Runs fn(0..n-1) on up to `workers` threads (0 means default_workers()).
/// Indices are split into contiguous blocks, so results written by index are
/// independent of the thread count. The exception of the lowest failing index
/// is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t workers = 0);

}  // namespace lsde
