#pragma once

#include <cstdint>
#include <random>

namespace qrfx {

using Rng = std::mt19937_64;

// splitmix64 step (Vigna). Used only to spread user seeds and stream indices
// into well-mixed 64-bit engine seeds so that nearby (seed, stream) pairs give
// unrelated streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministically derives an engine seed from (seed, stream index).
// Every parallelizable loop in the library draws from its own derived stream,
// which makes results independent of scheduling and thread count.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    s ^= stream * 0x9e3779b97f4a7c15ULL;
    std::uint64_t b = splitmix64(s);
    return a ^ (b + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(derive_seed(seed, stream));
}

} // namespace qrfx
