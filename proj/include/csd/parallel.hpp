#pragma once

#include <cstdint>
#include <functional>

namespace csd {

/// Worker cap: hardware concurrency, lowered by the CSD_THREADS environment variable.
int worker_count();

/// Runs fn(i) for i in [0, n). Each index is handled by exactly one worker,
/// so results never depend on the worker count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

} // namespace csd
