#pragma once

#include <cstddef>
#include <functional>

namespace residprop {

// Worker cap: RESIDPROP_THREADS if set (clamped to [1, 64]), else the
// hardware concurrency.
int max_threads();

// Runs fn(i) for i in [0, count) on up to max_threads() workers, each owning
// a contiguous index range. Callers must write results into per-index slots;
// with disjoint writes the outcome is identical at any thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace residprop
