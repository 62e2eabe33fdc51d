#pragma once

#include <cstdint>
#include <random>

namespace subdiff {

/// SplitMix64 finalizer; used to derive independent engine seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Purpose tags for per-path random streams. Streams never share state, so the
/// Brownian draws of a path are identical whatever subordinator family is used.
enum class Stream : std::uint64_t { subordinator = 1, brownian = 2 };

using Engine = std::mt19937_64;

/// Engine for (master seed, path index, purpose). Pure function of its
/// arguments, so ensembles do not depend on thread scheduling.
inline Engine make_engine(std::uint64_t seed, std::uint64_t path, Stream stream) {
    std::uint64_t key = splitmix64(seed);
    key = splitmix64(key ^ splitmix64(path + 0x632be59bd9b4e019ULL));
    key = splitmix64(key ^ static_cast<std::uint64_t>(stream));
    std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
    return Engine(seq);
}

}  // namespace subdiff
