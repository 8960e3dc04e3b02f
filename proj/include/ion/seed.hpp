#pragma once
// Seed derivation. Every random stream in a run is keyed off one global seed:
//
//   split_seed(base, {k1, k2, ...}) = fold of splitmix64 over the keys
//
// so adding a new key (technique, domain, replicate, image index) never
// perturbs the streams of existing keys.

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace ion {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t split_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

// FNV-1a, for turning names into split keys.
constexpr std::uint64_t name_key(std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace ion
