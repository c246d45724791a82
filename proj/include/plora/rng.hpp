#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace plora {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a root seed and a tuple of tags
/// (round, client id, purpose, ...). Order of tags matters.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = splitmix64(root);
    for (std::uint64_t t : tags) h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ull));
    return h;
}

/// Stream purposes used with derive_seed.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kSample = 3;
inline constexpr std::uint64_t kMask = 4;
inline constexpr std::uint64_t kLora = 5;
inline constexpr std::uint64_t kAdapter = 6;
inline constexpr std::uint64_t kPartition = 7;
inline constexpr std::uint64_t kSplit = 8;
inline constexpr std::uint64_t kData = 9;
}  // namespace stream

}  // namespace plora
