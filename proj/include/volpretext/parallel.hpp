#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace vpx {

// Worker count: VOLPRETEXT_THREADS caps parallelism, 0 (or 1) means serial.
// Unset falls back to the hardware count. Results are identical either way:
// parallel loops only ever partition disjoint output slices.
inline int worker_threads() {
    static const int n = [] {
        if (const char* env = std::getenv("VOLPRETEXT_THREADS")) {
            long v = std::strtol(env, nullptr, 10);
            if (v <= 0) return 1;
            return static_cast<int>(v);
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }();
    return n;
}

// Runs fn(i) for i in [0, count). Fixed contiguous partition per worker, so
// every index runs exactly once and writes land where the serial loop would
// put them.
template <typename Fn>
void parallel_for(std::int64_t count, Fn&& fn) {
    const int workers = worker_threads();
    if (workers <= 1 || count <= 1) {
        for (std::int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    const int used = static_cast<int>(std::min<std::int64_t>(workers, count));
    const std::int64_t chunk = (count + used - 1) / used;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(used));
    for (int w = 0; w < used; ++w) {
        const std::int64_t lo = w * chunk;
        const std::int64_t hi = std::min<std::int64_t>(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace vpx
