#pragma once

#include <cstddef>
#include <functional>

namespace nbfa {

/// Worker cap: NBFA_THREADS when set and positive, else the hardware concurrency.
int worker_count();

/// Calls body(i) for i in [0, n). Work is split into contiguous chunks across
/// at most worker_count() threads; small ranges run inline. The body must only
/// write state owned by index i. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)> &body);

} // namespace nbfa
