#ifndef BOUNDBENCH_PARALLEL_HPP
#define BOUNDBENCH_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace boundbench {

/// Worker cap: BOUNDBENCH_THREADS if set and positive, else hardware concurrency.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("BOUNDBENCH_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) {
                return static_cast<std::size_t>(v);
            }
        } catch (...) {
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, count). Each index must write only its own output slot;
/// callers reduce afterwards in index order so results never depend on the
/// number of workers.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn, std::size_t min_per_worker = 1) {
    const std::size_t workers =
        std::min(worker_count(), std::max<std::size_t>(1, count / std::max<std::size_t>(1, min_per_worker)));
    if (workers <= 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(count, lo + chunk);
        if (lo >= hi) {
            break;
        }
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) {
                fn(i);
            }
        });
    }
}

}  // namespace boundbench

#endif  // BOUNDBENCH_PARALLEL_HPP
