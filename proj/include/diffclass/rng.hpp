#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace diffclass {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                    std::uint64_t c = 0)
{
    return mix64(mix64(mix64(base ^ mix64(a)) ^ b) ^ mix64(c + 0x632be59bd9b4e019ULL));
}

// FNV-1a, 64-bit. Stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::vector<double> standard_normal(Rng& rng, std::size_t n)
{
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> out(n);
    for (double& v : out) {
        v = dist(rng);
    }
    return out;
}

}  // namespace diffclass
