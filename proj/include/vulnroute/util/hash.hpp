#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace vulnroute {

// 64-bit FNV-1a. Stable across platforms; used for feature hashing and
// deriving per-category seeds.
constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

// Derives an independent seed for a named sub-run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  return fnv1a64(name, fnv1a64(std::to_string(seed)));
}

}  // namespace vulnroute
