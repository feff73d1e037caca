#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace gtnn {

/// 64-bit FNV-1a, optionally continuing from a previous state.
inline std::uint64_t fnv1a(std::span<const unsigned char> bytes,
                           std::uint64_t state = 0xcbf29ce484222325ULL) {
  for (unsigned char b : bytes) {
    state ^= b;
    state *= 0x100000001b3ULL;
  }
  return state;
}

inline std::uint64_t fnv1a(std::string_view text, std::uint64_t state = 0xcbf29ce484222325ULL) {
  return fnv1a(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()), state);
}

}  // namespace gtnn
