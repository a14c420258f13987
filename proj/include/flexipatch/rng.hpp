#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace flexipatch {

// Deterministic random stream. The mt19937_64 engine is fully specified by
// the standard; the value transforms below are written out explicitly so the
// draw sequence does not depend on the standard library's distribution
// implementations. Streams for different purposes ("data", "size", "init")
// are derived from (seed, stream name) so that consuming one stream never
// shifts another.
class RandomStream {
public:
    RandomStream(uint64_t seed, const std::string& name)
        : eng_(mix(seed, fnv1a(name))) {}
    explicit RandomStream(uint64_t seed) : eng_(mix(seed, 0x9e3779b97f4a7c15ULL)) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection-free modulo bias is negligible for our n, but keep it exact.
        uint64_t lim = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= lim);
        return v % n;
    }

    // Standard normal via Box-Muller. Two values per pair of uniforms; the
    // spare is cached so the draw count is stable.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    static uint64_t fnv1a(const std::string& s) {
        uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return h;
    }

    static uint64_t mix(uint64_t a, uint64_t b) {
        // splitmix64 finalizer over the combined words
        uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b | 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace flexipatch
