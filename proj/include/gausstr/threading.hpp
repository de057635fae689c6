#pragma once

#include <cstdint>
#include <functional>

namespace gausstr {

// Global worker count: 0 = auto (hardware concurrency). Set once from the
// CLI (--threads / GAUSSTR_THREADS); reads resolve the effective count.
void set_thread_count(int n);
int thread_count();

// Runs fn(begin, end) over [0, n) split into contiguous chunks, one chunk
// per worker. Chunk boundaries depend only on n and the worker count, and
// callers must write disjoint outputs, so results never depend on timing.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace gausstr
