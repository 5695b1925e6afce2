#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace radep {

/// splitmix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) {
  return mix64(parent ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

/// FNV-1a over raw bytes, then finalized.
inline std::uint64_t hash_bytes(std::span<const unsigned char> bytes,
                                std::uint64_t key = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ mix64(key);
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

inline std::uint64_t hash_string(std::string_view s, std::uint64_t key = 0) {
  return hash_bytes({reinterpret_cast<const unsigned char*>(s.data()), s.size()}, key);
}

}  // namespace radep
