#pragma once

#include <cmath>
#include <cstdint>

namespace facetouch {

// Deterministic 64-bit generator (splitmix64). The whole project draws
// randomness through this type so that a run is reproducible from its seed
// alone, on any platform. Substreams are derived by hashing the base seed
// with up to three stream labels, which lets per-sample work be generated
// independently of iteration or thread order.
class RngState {
public:
    explicit RngState(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix(state_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Multiply-shift map; n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller. Consumes two draws, returns one;
    // no caching so substream derivations stay position-independent.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Independent generator labeled (a, b, c) under the same base seed.
    RngState substream(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
        std::uint64_t s = seed_;
        s = mix(s ^ mix(a + 0x8BADF00D5EEDull));
        s = mix(s ^ mix(b + 0x1D872B41C0FFEEull));
        s = mix(s ^ mix(c + 0xFACE70C4ED5ull));
        return RngState(s);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t state_;
};

}  // namespace facetouch
