#pragma once

// Chunked parallel-for over an index range. Work items must be independent;
// callers that need determinism across thread counts should only aggregate
// order-independent results (integer counts, per-index slots).

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace lglab {

inline void parallel_for(int64_t count, int threads, const std::function<void(int64_t)>& body) {
    threads = std::max(1, threads);
    if (threads == 1 || count <= 1) {
        for (int64_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    const int64_t per = (count + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const int64_t lo = t * per;
        const int64_t hi = std::min(count, lo + per);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (int64_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

inline int default_threads() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace lglab
