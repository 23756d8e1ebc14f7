#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace sep {

/// Runs body(begin, end) over contiguous chunks of [0, count) on up to
/// `workers` threads. Chunk boundaries only affect scheduling; callers keep
/// per-index work independent so results do not depend on the worker count.
/// The first exception thrown by any chunk is rethrown on the caller.
template <typename Body>
void parallel_for(std::size_t count, unsigned workers, Body&& body) {
    workers = std::max(1u, workers);
    if (workers == 1 || count < 2) {
        body(std::size_t{0}, count);
        return;
    }
    const std::size_t n_chunks = std::min<std::size_t>(workers, count);
    const std::size_t chunk = (count + n_chunks - 1) / n_chunks;

    std::exception_ptr first_error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> threads;
        threads.reserve(n_chunks);
        for (std::size_t c = 0; c < n_chunks; ++c) {
            const std::size_t begin = c * chunk;
            const std::size_t end = std::min(count, begin + chunk);
            if (begin >= end) break;
            threads.emplace_back([&, begin, end] {
                try {
                    body(begin, end);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            });
        }
    }
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace sep
