#pragma once

#include <cstdint>
#include <random>

namespace cvq {

using Rng = std::mt19937_64;

// Independent sub-streams of one scenario seed.
enum class Stream : std::uint64_t {
  traffic = 1,
  channel = 2,
  bootstrap_traffic = 3,
};

inline Rng make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x9e3779b9u};
  return Rng(seq);
}

// Uniform in [0, 1) built from the top 53 bits; identical on every standard library,
// unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

}  // namespace cvq
