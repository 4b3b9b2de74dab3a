#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace hast {

using Rng = std::mt19937_64;

/// Independent generator for a named stream under a global seed.
/// std::seed_seq has a fully specified mixing algorithm, so streams are
/// reproducible across standard library implementations.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * stream.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto v : stream) push(v);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// Stream tags. Values are part of the reproducibility contract.
namespace stream {
inline constexpr std::uint64_t kModelInit = 1;
inline constexpr std::uint64_t kDataset = 2;
inline constexpr std::uint64_t kSchedule = 3;
inline constexpr std::uint64_t kClient = 4;
inline constexpr std::uint64_t kUniverse = 5;
inline constexpr std::uint64_t kPreset = 6;
}  // namespace stream

}  // namespace hast
