#include "perffl/rng.hpp"

#include <random>

#include <boost/random/uniform_int_distribution.hpp>

namespace perffl {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t Rng::derive_key(std::uint64_t seed, std::uint64_t stream, std::string_view label,
                              std::uint64_t index) {
  std::uint64_t k = splitmix64(seed);
  k = splitmix64(k ^ stream);
  k = splitmix64(k ^ fnv1a(label));
  return splitmix64(k ^ index);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream, std::string_view label, std::uint64_t index) {
  const std::uint64_t key = derive_key(seed, stream, label, index);
  std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
                    static_cast<std::uint32_t>(splitmix64(key)),
                    static_cast<std::uint32_t>(splitmix64(key) >> 32)};
  engine_.seed(seq);
}

std::uint64_t Rng::below(std::uint64_t n) {
  boost::random::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(engine_);
}

}  // namespace perffl
