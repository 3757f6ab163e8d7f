#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace birads {

using Rng = std::mt19937_64;

/// Engine seeded from a master seed and any number of stream keys, so that
/// sub-streams (per record, per epoch, per fold) are independent of the
/// order in which they are consumed.
inline Rng make_rng(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.reserve(keys.size() * 2);
  for (std::uint64_t k : keys) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

/// Uniform in [lo, hi]; returns lo when the range is empty.
inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
}

}  // namespace birads
