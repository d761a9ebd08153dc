#pragma once

#include <cstdint>

namespace featup {

/// Worker count for kernel loops: FEATUP_THREADS when set, else hardware parallelism.
int thread_count();
void set_thread_count(int n);

/// Runs fn(i) for i in [begin, end) with a static schedule. Callers must make
/// each iteration independent or write to disjoint memory; reductions are done
/// by the caller in a fixed order so results do not depend on thread count.
template <typename Fn>
void parallel_for(std::int64_t begin, std::int64_t end, Fn&& fn) {
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (std::int64_t i = begin; i < end; ++i) fn(i);
}

}  // namespace featup
