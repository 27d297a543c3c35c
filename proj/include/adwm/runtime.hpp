#pragma once

#include <cstddef>
#include <functional>

namespace adwm {

/// Keeps large freed buffers in the heap instead of returning them to the OS;
/// activations are allocated and dropped every step.
void configure_allocator();

/// Worker cap from ADWM_THREADS (default: hardware concurrency, at least 1).
std::size_t thread_cap();

/// Runs fn(i) for i in [0, count) on up to thread_cap() threads. Exceptions are
/// rethrown on the caller (lowest index first).
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace adwm
