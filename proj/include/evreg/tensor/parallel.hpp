#pragma once

#include <cstddef>
#include <functional>

namespace evreg {

/// EVREG_THREADS when set to a positive integer, else the hardware
/// concurrency (at least 1).
std::size_t thread_count();

/// Runs fn(i) for i in [0,n) on up to thread_count() threads. Indices are
/// assigned round-robin, so fn must only write to slots owned by i. The
/// first exception is rethrown after all threads finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace evreg
