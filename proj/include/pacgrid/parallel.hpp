#pragma once

#include <cstddef>
#include <functional>

namespace pacgrid {

/// Worker cap from PACGRID_THREADS (unset or invalid: hardware concurrency).
std::size_t thread_count();

/// Runs body(i) for i in [0, count). Each index is handled by exactly one
/// worker, so callers that write per-index slots and reduce them afterwards
/// in index order get results independent of the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace pacgrid
