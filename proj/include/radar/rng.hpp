#pragma once

#include <cmath>
#include <cstdint>

#include "radar/error.hpp"

namespace radar {

// Counter-based pseudo-random generator (SplitMix64 core). A stream is a (key, counter)
// pair; each draw hashes the pair and bumps the counter, so streams can be forked with
// derive() without sharing state. Every stochastic operation in the library takes an
// explicit Rng so runs are reproducible from a single seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)), counter_(0) {}

    // Independent child stream addressed by (a, b), e.g. (epoch, step) or a user index.
    // Does not advance this stream.
    [[nodiscard]] Rng derive(std::uint64_t a, std::uint64_t b = 0) const {
        Rng child(0);
        child.key_ = mix(mix(key_ ^ mix(a + 0x9e3779b97f4a7c15ull)) ^ mix(b + 0xbf58476d1ce4e5b9ull));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

    // Uniform on the open interval (0, 1): 53-bit mantissa, offset half a ulp so that
    // logit(u) and log(u) are always finite.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    // Uniform integer in [0, n). Rejection keeps the draw unbiased.
    std::uint64_t uniform_int(std::uint64_t n) {
        require(n > 0, "uniform_int needs n > 0");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    // Standard normal via Box-Muller. Both draws from this stream; no cached spare so
    // the stream position stays a pure function of the draw count.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    std::uint64_t key() const { return key_; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

}  // namespace radar
