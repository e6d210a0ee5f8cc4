#pragma once

#include <functional>

namespace landmatch {

/// Worker cap for numeric fan-out: LANDMATCH_NUM_THREADS when set to a
/// positive integer, otherwise the hardware concurrency.
int numeric_threads();

/// Runs fn(0..n-1) on up to `threads` workers. Each index runs exactly
/// once; the first exception is rethrown after all workers join.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace landmatch
