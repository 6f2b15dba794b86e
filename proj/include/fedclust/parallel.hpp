#pragma once

#include <cstddef>
#include <functional>

namespace fedclust {

// Deterministic data parallelism: indices are statically partitioned into
// contiguous ranges, one per worker, and every task writes only its own
// output slots. Because no floating-point reduction crosses a task boundary,
// results are bit-identical for any worker count. Nested calls run serially.
//
// workers <= 1 runs inline.
void parallel_for(std::size_t count, int workers,
                  const std::function<void(std::size_t begin, std::size_t end)>& body);

// Convenience: per-index body.
void parallel_for_each(std::size_t count, int workers,
                       const std::function<void(std::size_t index)>& body);

}  // namespace fedclust
