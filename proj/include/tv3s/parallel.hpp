#pragma once

#include <functional>

namespace tv3s {

// Number of worker threads used when a call site passes threads == 0.
// Defaults to 1: every numeric path in this project is deterministic, and
// parallelism is only safe where workers write disjoint outputs (window
// slots, grad-check coordinates). Callers opt in explicitly.
int default_threads();
void set_default_threads(int n);

// Runs fn(i) for i in [0, n). With one thread this is a plain loop; with more
// it block-partitions the range. fn must only write state owned by index i.
// The first exception thrown by any worker is rethrown on the caller.
void parallel_for(int n, const std::function<void(int)>& fn, int threads = 0);

}  // namespace tv3s
