#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace anchorpheno {

// splitmix64: cheap, well-mixed stream derivation. Used to spawn independent
// sub-streams (per patient, per repeat, per purpose) from one master seed so
// that generation order never matters.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Derive a named sub-seed: mixes the tag hash into the master seed.
inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t index = 0) {
    return splitmix64(splitmix64(seed ^ fnv1a64(tag)) ^ index);
}

inline std::mt19937_64 make_engine(uint64_t seed) {
    return std::mt19937_64(splitmix64(seed));
}

}  // namespace anchorpheno
