#pragma once

#include <cstdint>
#include <random>

namespace cbc {

using Rng = std::mt19937_64;

/// Independent sub-streams derived from one experiment seed.
///
/// Every consumer of randomness in a training or evaluation run draws from its
/// own stream so that, e.g., enabling counterfactual sampling does not shift
/// the shuffling sequence. A stream's generator is seeded with
/// splitmix64(seed ^ splitmix64(stream_id)).
enum class Stream : std::uint64_t {
  Init = 1,
  Counterfactuals = 2,
  Shuffle = 3,
  PolicyNoise = 4,
  ExpertiseInit = 5,
  Demonstrations = 6,
  EvalReset = 7,
  Subsample = 8,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline Rng make_stream(std::uint64_t seed, Stream stream) {
  return Rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream))));
}

/// Mixes further integers (sweep cell coordinates) into a seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t value) {
  return splitmix64(seed ^ splitmix64(value + 0x632BE59BD9B4E019ULL));
}

} // namespace cbc
