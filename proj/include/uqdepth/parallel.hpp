#pragma once

#include <cstddef>
#include <functional>

namespace uqd {

// Worker count: hardware concurrency capped by UQDEPTH_THREADS (if set).
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Work is split across worker_count() threads;
// callers write results by index so the outcome is order-independent.
// The first exception thrown by any task is rethrown after all finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace uqd
