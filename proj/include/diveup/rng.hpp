#pragma once

#include <cmath>
#include <cstdint>

namespace diveup {

// Deterministic splittable PRNG: xoshiro256** seeded through splitmix64 from
// (seed, stream). Same (seed, stream, call sequence) gives identical draws on
// any platform; distinct streams are independent.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0) : seed_(seed), stream_(stream) {
        uint64_t sm = seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
        for (auto& s : state_) s = splitmix64(sm);
        // avoid the all-zero state
        if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
    }

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }

    // Derives an independent substream; the parent's draw position is unaffected.
    Rng fork(uint64_t substream) const {
        uint64_t mixed = stream_;
        mixed = splitmix64_once(mixed ^ (substream + 0x9E3779B97F4A7C15ULL));
        return Rng(seed_, mixed);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Box-Muller; both uniforms are always consumed so the call sequence is
    // position-independent.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0,1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static uint64_t splitmix64_once(uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    static uint64_t splitmix64(uint64_t& s) {
        s += 0x9E3779B97F4A7C15ULL;
        uint64_t x = s;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    uint64_t seed_;
    uint64_t stream_;
    uint64_t state_[4];
};

}  // namespace diveup
