#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace psp {

/// splitmix64 finalizer; decorrelates a base seed from a stream index so
/// per-epoch and per-purpose streams never overlap.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// The mt19937_64 engine itself is bit-specified by the standard; the
// std distributions are not, so the draws below are hand-rolled.

/// Uniform in [0,1) with full 53-bit mantissa resolution.
template <typename T>
T uniform01(std::mt19937_64& g) {
    return static_cast<T>((g() >> 11) * (1.0 / 9007199254740992.0));
}

/// Uniform in [lo,hi).
template <typename T>
T uniform(std::mt19937_64& g, T lo, T hi) {
    return lo + (hi - lo) * uniform01<T>(g);
}

/// Uniform integer in [0,n) by rejection, bias-free.
inline std::uint64_t uniform_index(std::mt19937_64& g, std::uint64_t n) {
    const std::uint64_t limit = ~0ULL - ~0ULL % n;
    std::uint64_t r;
    do {
        r = g();
    } while (r >= limit);
    return r % n;
}

/// Fisher-Yates shuffle with the draws above.
template <typename V>
void shuffle(std::vector<V>& v, std::mt19937_64& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(uniform_index(g, i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace psp
