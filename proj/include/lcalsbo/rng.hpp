#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lcalsbo {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a root seed and a stream name.
/// Every random consumer in the library gets its own named stream so that
/// adding draws in one place never shifts another.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index);

inline Rng make_rng(std::uint64_t root, std::string_view stream) {
  return Rng(derive_seed(root, stream));
}

inline Rng make_rng(std::uint64_t root, std::string_view stream, std::uint64_t index) {
  return Rng(derive_seed(root, stream, index));
}

/// FNV-1a over raw bytes; used for config and checkpoint fingerprints.
std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace lcalsbo
