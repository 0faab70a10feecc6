#pragma once

#include <cstddef>
#include <functional>

namespace good {

/// Worker cap from GOOD_THREADS (default 1).
std::size_t thread_count();

/// Calls fn(i) for i in [0, n), split into contiguous chunks over
/// thread_count() threads. fn must only write state owned by index i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace good
