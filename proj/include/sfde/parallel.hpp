#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace sfde {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. If several calls
/// throw, the exception of the lowest index is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn)
{
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex guard;
    std::exception_ptr error;
    std::size_t error_index = n;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(guard);
                if (i < error_index) {
                    error_index = i;
                    error = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

/// Chunk size of ensemble reductions. Fixed so that results do not depend on
/// the worker count.
inline constexpr std::size_t kReductionChunk = 16;

/// Reduces body(i, acc) over i in [0, n): members are accumulated sequentially
/// inside fixed-size chunks, chunks are merged in index order.
template <class Acc, class Make, class Body, class Merge>
Acc ensemble_reduce(std::size_t n, std::size_t threads, Make&& make, Body&& body, Merge&& merge)
{
    const std::size_t chunks = (n + kReductionChunk - 1) / kReductionChunk;
    std::vector<Acc> partial;
    partial.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) partial.push_back(make());
    parallel_for(chunks, threads, [&](std::size_t c) {
        const std::size_t end = std::min(n, (c + 1) * kReductionChunk);
        for (std::size_t i = c * kReductionChunk; i < end; ++i) body(i, partial[c]);
    });
    Acc total = make();
    for (auto& p : partial) merge(total, p);
    return total;
}

} // namespace sfde
