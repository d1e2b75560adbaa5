#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hnci {

// Pool size: min(hardware_concurrency, HNCI_THREADS). HNCI_THREADS=1 disables
// threading entirely.
inline unsigned thread_budget() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("HNCI_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1) hw = std::min<unsigned>(hw, static_cast<unsigned>(cap));
    }
    return hw;
}

// Runs fn(i) for i in [0, count). Work items must be independent; callers are
// responsible for deterministic per-item RNG substreams so the result does not
// depend on scheduling.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn,
                         unsigned max_threads = 0) {
    unsigned nthreads = thread_budget();
    if (max_threads >= 1) nthreads = std::min(nthreads, max_threads);
    if (nthreads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    nthreads = std::min<unsigned>(nthreads, static_cast<unsigned>(count));
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    workers.reserve(nthreads);
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    std::mutex err_mutex;
    for (unsigned t = 0; t < nthreads; ++t) {
        workers.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count || failed.load()) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!failed.exchange(true)) first_error = std::current_exception();
                    break;
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace hnci
