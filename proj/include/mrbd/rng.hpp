#pragma once

// Named random streams. Every consumer derives its generator from the root
// seed and a stream name ("init:0", "gate:2", "perturb:1:7", ...), so results
// do not depend on the order in which components draw numbers.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace mrbd {

using Rng = std::mt19937_64;

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

inline std::uint64_t stream_seed(std::uint64_t root, std::string_view name) {
  return splitmix64(splitmix64(root) ^ fnv1a(name));
}

inline Rng make_rng(std::uint64_t root, std::string_view name) {
  return Rng(stream_seed(root, name));
}

inline std::string stream_name(std::string_view base, std::uint64_t a) {
  return std::string(base) + ":" + std::to_string(a);
}

inline std::string stream_name(std::string_view base, std::uint64_t a, std::uint64_t b) {
  return std::string(base) + ":" + std::to_string(a) + ":" + std::to_string(b);
}

inline std::string stream_name(std::string_view base, std::uint64_t a, std::uint64_t b,
                               std::uint64_t c) {
  return stream_name(base, a, b) + ":" + std::to_string(c);
}

}  // namespace mrbd
