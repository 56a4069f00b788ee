#pragma once

#include <cstdint>
#include <functional>

namespace sodar {

// Worker cap: SODAR_THREADS if set to a positive integer, otherwise the
// hardware concurrency (at least 1).
int thread_budget();

// Calls fn(k) for k in [0, n) on up to thread_budget() threads. Callers write
// results into per-index slots and reduce them in index order.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace sodar
