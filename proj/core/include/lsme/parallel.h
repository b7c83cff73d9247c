#pragma once

#include <cstddef>
#include <functional>

namespace lsme {

// Worker count: LSME_THREADS if set and positive, else hardware concurrency.
std::size_t WorkerCount();

// Runs fn(i) for i in [0, n) on up to WorkerCount() threads. Each index is
// visited exactly once; callers write into preallocated slots so the result
// order never depends on scheduling. The first exception thrown by any task is
// rethrown after all workers stop.
void ParallelFor(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lsme
