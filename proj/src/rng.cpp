#include "lcalsbo/rng.hpp"

namespace lcalsbo {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  return splitmix64(splitmix64(root) ^ fnv1a(stream.data(), stream.size()));
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index) {
  return splitmix64(derive_seed(root, stream) ^ splitmix64(index + 0x51ed2701ULL));
}

}  // namespace lcalsbo
