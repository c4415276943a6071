#pragma once

#include <cstdint>
#include <string_view>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

namespace perffl {

/// Stream id for server-side draws; client streams use the client index.
inline constexpr std::uint64_t kServerStream = 0xFFFF'FFFF'0000'0001ULL;

/// Deterministic random stream keyed by (seed, stream id, label, index).
/// Two streams with the same key produce identical sequences regardless of
/// when or on which thread they are created.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream, std::string_view label, std::uint64_t index = 0);

  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  boost::random::mt19937_64& engine() { return engine_; }

  static std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream, std::string_view label,
                                  std::uint64_t index);

 private:
  boost::random::mt19937_64 engine_;
  boost::random::normal_distribution<double> normal_;
  boost::random::uniform_01<double> uniform_;
};

}  // namespace perffl
