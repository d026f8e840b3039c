#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace flexsdr::rng {

// splitmix64 step (Steele et al.). Fully specified, so streams are
// reproducible across platforms and standard libraries.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    return splitmix64(s);
}

// FNV-1a over bytes; stable string hashing for cache keys and noise draws.
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic pseudo-random stream. Distribution code is hand-rolled on
// purpose: std::uniform_real_distribution is implementation-defined and
// would break the byte-identical reproducibility contract.
class SplitMix {
public:
    explicit SplitMix(std::uint64_t seed) : state_(seed) {}

    // Derive an independent stream from a seed and a label path,
    // e.g. SplitMix::derived(seed, {"rollout", episode, i}).
    static SplitMix derived(std::uint64_t seed, std::string_view label,
                            std::initializer_list<std::uint64_t> path = {}) {
        std::uint64_t h = mix(seed, fnv1a(label));
        for (std::uint64_t p : path) h = mix(h, p);
        return SplitMix(h);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double next_range(double lo, double hi) {
        return lo + (hi - lo) * next_unit();
    }

    // Uniform integer in [0, n). Rejection-free modulo is fine at our scales.
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

private:
    std::uint64_t state_;
};

// One uniform draw in [0,1) as a pure function of the inputs; used where a
// noise decision must not depend on call order.
inline double unit_hash(std::uint64_t seed, std::string_view bytes) {
    std::uint64_t s = mix(seed, fnv1a(bytes));
    return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
}

}  // namespace flexsdr::rng
