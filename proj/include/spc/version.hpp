#pragma once

#include <cstdint>
#include <string_view>

namespace spc {

inline constexpr std::string_view kToolkitVersion = "0.1.0";

/// FNV-1a 64-bit, used to stamp outputs with the configuration they came from.
inline std::uint64_t fnv1a_hash(std::string_view text) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

}  // namespace spc
