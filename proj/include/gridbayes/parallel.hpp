#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <optional>
#include <string>

namespace gridbayes {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work is split into
// contiguous index blocks, so callers that write result[i] get the same
// output for any thread count. The first exception thrown is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

// Raises glibc's mmap/trim thresholds so the large, short-lived tensors of a
// training step are recycled from the heap instead of being mapped and
// faulted in on every allocation. No-op elsewhere; safe to call repeatedly.
void tune_allocator();

// --threads value if given, else GRIDBAYES_THREADS, else 1.
std::size_t resolve_threads(std::optional<long> flag);

}  // namespace gridbayes
