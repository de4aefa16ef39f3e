#include "csd/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace csd {

int worker_count() {
    static const int count = [] {
        int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
        if (const char* env = std::getenv("CSD_THREADS")) {
            try {
                int cap = std::stoi(env);
                if (cap >= 1) n = std::min(n, cap);
            } catch (const std::exception&) {
            }
        }
        return n;
    }();
    return count;
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    const int workers = static_cast<int>(std::min<int64_t>(worker_count(), n));
    if (workers <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int64_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace csd
