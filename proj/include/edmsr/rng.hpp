#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace edmsr {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Deterministic random source. Normal variates use an explicit Box-Muller
// transform so the stream does not depend on the standard library's
// std::normal_distribution implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2    = uniform();
        const double r     = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_     = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Independent child stream; derived purely from the given seed pair so
    // forks by index are reproducible regardless of parent state.
    static Rng stream(uint64_t seed, uint64_t index) {
        return Rng(splitmix64(seed ^ splitmix64(index + 1)));
    }

private:
    std::mt19937_64 gen_;
    double spare_     = 0.0;
    bool has_spare_   = false;
};

}  // namespace edmsr
