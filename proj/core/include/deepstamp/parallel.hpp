#pragma once

#include <cstddef>
#include <functional>

namespace deepstamp {

/// Worker cap from DEEPSTAMP_THREADS, else hardware concurrency (at least 1).
std::size_t worker_threads();

/// Runs body(i) for i in [0, n) over up to worker_threads() threads.
/// Each index is processed exactly once; callers must write disjoint outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace deepstamp
