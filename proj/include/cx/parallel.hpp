#pragma once

#include <cstddef>
#include <functional>

namespace cx {

/// Number of workers to use for `requested` (0 = hardware concurrency).
std::size_t resolve_threads(std::size_t requested);

/// Splits [0, n) into contiguous chunks, one per worker, and runs
/// `body(begin, end, worker)` on each. Runs inline when one worker suffices.
/// The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

}  // namespace cx
