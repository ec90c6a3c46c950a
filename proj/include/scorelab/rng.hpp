#ifndef SCORELAB_RNG_HPP
#define SCORELAB_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace scorelab {

// Counter-based seed derivation: every (master, index, label) triple maps to a
// statistically independent child seed, so parallel runs can split streams
// without coordinating.
namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

inline std::uint64_t child_seed(std::uint64_t master, std::uint64_t index,
                                std::string_view label) {
    // Chain (not XOR) so that swapping master and index cannot collide.
    std::uint64_t h = detail::splitmix64(master);
    h = detail::splitmix64(h + index);
    h = detail::splitmix64(h ^ detail::fnv1a(label));
    return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

} // namespace scorelab

#endif // SCORELAB_RNG_HPP
