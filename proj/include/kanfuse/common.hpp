#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace kf {

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValueError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class A, class... Rest>
void format_into(std::ostringstream& os, const A& a, const Rest&... rest) {
    os << a;
    format_into(os, rest...);
}
} // namespace detail

template <class... Args>
std::string cat(const Args&... args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    return os.str();
}

// Worker-pool width. KANFUSE_THREADS caps it; value is fixed for the process.
inline int max_threads() {
    static const int n = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw <= 0) hw = 1;
        if (const char* env = std::getenv("KANFUSE_THREADS")) {
            int cap = std::atoi(env);
            if (cap >= 1 && cap < hw) hw = cap;
        }
        return hw;
    }();
    return n;
}

// Runs fn over [0,total) in contiguous chunks, one chunk per worker. The
// partition depends only on `total` and the fixed thread cap, and chunks are
// disjoint, so results are identical for any thread count.
inline void parallel_chunks(int64_t total, const std::function<void(int64_t, int64_t)>& fn) {
    if (total <= 0) return;
    int nthreads = max_threads();
    if (nthreads > total) nthreads = static_cast<int>(total);
    if (nthreads <= 1 || total < 4) {
        fn(0, total);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(static_cast<size_t>(nthreads));
    int64_t chunk = (total + nthreads - 1) / nthreads;
    for (int t = 0; t < nthreads; ++t) {
        int64_t b = t * chunk;
        int64_t e = std::min<int64_t>(total, b + chunk);
        if (b >= e) break;
        workers.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& w : workers) w.join();
}

} // namespace kf
