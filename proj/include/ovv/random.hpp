#pragma once

#include <cstdint>
#include <initializer_list>

namespace ovv {

/// SplitMix64 finalizer. Used to derive independent stream seeds from a base
/// seed and a tuple of counters (epoch, step, item, ...).
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t s = mix_seed(base);
  for (std::uint64_t p : parts) s = mix_seed(s ^ mix_seed(p + 0x632BE59BD9B4E019ULL));
  return s;
}

}  // namespace ovv
