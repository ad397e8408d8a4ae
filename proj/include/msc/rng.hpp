#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

// Counter-based deterministic random streams. Every draw is a pure function
// of (key, counter), so noise at (seed, frame, position) is order-independent
// and bit-reproducible regardless of evaluation order or thread count.

namespace msc::rng {

// splitmix64 finalizer
inline std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Fold an id list into one stream key.
inline std::uint64_t key(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t k = 0x853c49e6748fea9bULL;
    for (std::uint64_t p : parts) k = mix(k ^ p);
    return k;
}

// Stream ids, so independent uses of the same seed never collide.
enum Stream : std::uint64_t {
    kParamInit = 1,
    kNoiseEps = 2,
    kFrameTimesteps = 3,
    kSamplerInit = 4,
    kSamplerStep = 5,
    kData = 6,
    kTest = 7,
};

inline std::uint64_t uniform_u64(std::uint64_t k, std::uint64_t ctr) { return mix(k ^ mix(ctr)); }

// uniform in [0, 1)
inline double u01(std::uint64_t k, std::uint64_t ctr) {
    return static_cast<double>(uniform_u64(k, ctr) >> 11) * 0x1.0p-53;
}

inline std::int64_t uniform_int(std::uint64_t k, std::uint64_t ctr, std::int64_t n) {
    return static_cast<std::int64_t>(uniform_u64(k, ctr) % static_cast<std::uint64_t>(n));
}

// standard normal via Box-Muller; consumes counters 2*ctr and 2*ctr+1
inline double gaussian(std::uint64_t k, std::uint64_t ctr) {
    const double u1 = 1.0 - u01(k, 2 * ctr);  // (0, 1]
    const double u2 = u01(k, 2 * ctr + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

// normal truncated to +-2 sigma, scaled by std
inline double trunc_normal(std::uint64_t k, std::uint64_t ctr, double std_dev) {
    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
        const double z = gaussian(k, ctr * 64 + attempt);
        if (z >= -2.0 && z <= 2.0) return z * std_dev;
    }
    return 0.0;  // probability ~0; keeps the function total
}

}  // namespace msc::rng
