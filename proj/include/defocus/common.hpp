#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace defocus {

// Training allocates and frees multi-megabyte activation buffers every
// step; glibc serves those via mmap by default, which costs a page-fault
// storm per step. Raising the thresholds keeps the buffers on the heap
// where they get reused. Idempotent, safe to call often.
inline void tune_allocator() {
#if defined(__GLIBC__)
    static const bool done = [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 256 << 20);
        return true;
    }();
    (void)done;
#endif
}

// Error categories, mapped to CLI exit codes (1/2/3).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InternalError : std::runtime_error {
    explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Global worker count for the few places that parallelize (eval, synth).
// 1 guarantees bit-reproducible artifacts; results are designed to be
// identical for any count, since workers only ever write disjoint outputs.
inline int& thread_count() {
    static int n = 1;
    return n;
}

inline void set_thread_count(int n) {
    thread_count() = n < 1 ? 1 : n;
}

// Runs fn(i) for i in [0, count). Work is split by index stride so the
// assignment of items to slots does not depend on timing.
template <typename Fn>
void parallel_for(int64_t count, Fn&& fn) {
    const int workers = static_cast<int>(std::min<int64_t>(thread_count(), count));
    if (workers <= 1) {
        for (int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([=, &fn] {
            for (int64_t i = w; i < count; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace defocus
