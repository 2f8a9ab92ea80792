#pragma once

#include <cstddef>
#include <functional>

namespace evlign {

/// Worker count: EVLIGN_THREADS if set and positive, else hardware concurrency.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) over contiguous chunks, one chunk per worker.
/// Callers write results into pre-sized slots indexed by i, so the outcome
/// does not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace evlign
