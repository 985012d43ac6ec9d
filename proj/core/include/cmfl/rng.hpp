#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cmfl {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// FNV-1a over bytes; stable across platforms and runs.
constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derives an independent stream seed from a master seed and a fixed label,
/// e.g. derive_seed(master, "shuffle").
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view label) noexcept {
    return mix64(master ^ mix64(fnv1a64(label)));
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                    std::uint64_t a, std::uint64_t b = 0) noexcept {
    return mix64(derive_seed(master, label) ^ mix64(a * 0x9e3779b97f4a7c15ULL + mix64(b)));
}

using Rng = std::mt19937_64;

}  // namespace cmfl
