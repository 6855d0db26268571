#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fcos::detail {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index writes its own output
// slot, so results do not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex m;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(m);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace fcos::detail
