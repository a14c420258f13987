#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace flexipatch {

inline const char* version_string() { return "flexipatch 0.1.0"; }

// Thrown for contract violations (bad shapes, invalid configs, ...).
// The CLI maps these to exit code 2.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a computation produces NaN/Inf where it must not.
// The CLI maps these to exit code 3.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// I/O failures (missing files, short reads). CLI exit code 4.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw config_error(msg);
}

// Worker count for parallel regions. Every parallel loop in this codebase
// partitions its output range disjointly and keeps the per-element summation
// order identical to the serial loop, so results are bit-identical for any
// thread count. FLEXIPATCH_THREADS=1 forces strictly serial execution.
inline std::atomic<int>& thread_count_store() {
    static std::atomic<int> n = [] {
        if (const char* env = std::getenv("FLEXIPATCH_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        if (hw == 0) hw = 1;
        return static_cast<int>(hw > 8 ? 8 : hw);
    }();
    return n;
}

inline int thread_count() { return thread_count_store().load(); }
inline void set_thread_count(int n) { thread_count_store().store(n < 1 ? 1 : n); }

// Static split of [0, n) across workers; fn(begin, end) writes only its range.
template <typename Fn>
void parallel_for(long long n, Fn&& fn) {
    int nt = thread_count();
    if (nt <= 1 || n < 2) {
        fn(0LL, n);
        return;
    }
    if (static_cast<long long>(nt) > n) nt = static_cast<int>(n);
    std::vector<std::thread> pool;
    pool.reserve(nt - 1);
    long long chunk = (n + nt - 1) / nt;
    for (int t = 1; t < nt; ++t) {
        long long b = t * chunk;
        long long e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(0LL, std::min(n, chunk));
    for (auto& th : pool) th.join();
}

template <typename T>
std::string join_ints(const std::vector<T>& v, const std::string& sep = "x") {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) os << sep;
        os << v[i];
    }
    return os.str();
}

}  // namespace flexipatch
