#pragma once

#include <cstdint>
#include <random>

namespace special {

using Rng = std::mt19937_64;

// splitmix64 finaliser; used to key per-pixel decisions and derive sub-streams.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Independent generator seeded from the parent stream and a stream tag.
inline Rng derive_rng(Rng& parent, std::uint64_t tag) {
    return Rng(mix64(parent() ^ mix64(tag)));
}

// Uniform double in [0, 1) from a hashed key.
constexpr double unit_from_hash(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace special
