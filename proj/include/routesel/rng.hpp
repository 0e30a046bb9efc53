#pragma once

#include <cstdint>
#include <random>

namespace routesel {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based seed derivation: the seed of (stream, index) depends only on the
// root seed and the two counters, so work items can be generated in any order
// or in parallel and still see the same randomness.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(root) ^ (stream * 0xd1b54a32d192ed03ULL)) ^
                    (index * 0x8cb92ba72f3d8dd7ULL));
}

inline Rng make_rng(std::uint64_t root, std::uint64_t stream, std::uint64_t index = 0) {
  return Rng(derive_seed(root, stream, index));
}

// Named streams so that derived seeds never collide between subsystems.
namespace streams {
inline constexpr std::uint64_t kGenerator = 1;
inline constexpr std::uint64_t kSolver = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kShuffle = 4;
inline constexpr std::uint64_t kSummaryToken = 5;
inline constexpr std::uint64_t kDataset = 6;
}  // namespace streams

}  // namespace routesel
