#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cenet {

using Rng = std::mt19937_64;

inline uint64_t splitmix64(uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent stream seed for (seed, a, b), e.g. (run seed, epoch, case index).
inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0)
{
    return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

/// 64-bit FNV-1a.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL)
{
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Uniform double in [lo, hi) from the top 53 bits of one draw.
inline double uniform(Rng& rng, double lo, double hi)
{
    return lo + (hi - lo) * double(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [lo, hi].
inline int64_t uniform_int(Rng& rng, int64_t lo, int64_t hi)
{
    return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean, double sigma)
{
    return std::normal_distribution<double>(mean, sigma)(rng);
}

}  // namespace cenet
