#pragma once

#include <cmath>
#include <cstdint>

namespace kf {

// splitmix64; used both as a generator and to derive child seeds.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    uint64_t s = master ^ (0x632be59bd9b4e019ULL * (stream + 1));
    splitmix64(s);
    return splitmix64(s);
}

// Deterministic RNG with explicit distributions. std:: distributions are
// implementation-defined, so everything that must reproduce bit-exactly
// across platforms goes through this.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {
        // burn-in so nearby seeds decorrelate
        splitmix64(state_);
    }

    uint64_t next_u64() { return splitmix64(state_); }

    uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

    // uniform in [0,1) with 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    int64_t uniform_int(int64_t n) {
        if (n <= 1) return 0;
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    // Box-Muller; one spare cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Fisher-Yates over indices [0,n)
    template <class Vec>
    void shuffle(Vec& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    Rng child(uint64_t stream) const { return Rng(derive_seed(state_, stream)); }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace kf
