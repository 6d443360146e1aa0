#pragma once

#include <cstddef>
#include <functional>

namespace g2kit {

/// Worker count: G2KIT_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
unsigned default_thread_count();

/// Runs body(i) for i in [0, n) on up to `threads` workers. Indices are handed
/// out dynamically; the first exception thrown by any body is rethrown after
/// all workers have joined.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

}  // namespace g2kit
