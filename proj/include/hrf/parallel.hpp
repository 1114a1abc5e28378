#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace hrf {

/// Worker cap from HRF_THREADS; defaults to 1.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("HRF_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (...) {
        }
    }
    return 1;
}

/// Runs fn(i) for i in [0, count) on contiguous chunks. Each index writes only
/// its own output slot, so results do not depend on the worker count. The
/// first exception (lowest chunk) is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(count, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                const std::size_t end = std::min(count, (w + 1) * chunk);
                for (std::size_t i = w * chunk; i < end; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace hrf
