#pragma once

#include <functional>

namespace bmax {

// Worker cap: BMAX_THREADS if set, else hardware concurrency.
int thread_budget();

// Runs fn(0..n-1). Work items must be independent; any result layout
// indexed by i is schedule-independent by construction. Runs inline when
// the budget (or n) is 1.
void parallel_for(int n, const std::function<void(int)>& fn, int max_threads = 0);

}  // namespace bmax
