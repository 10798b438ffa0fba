#include "udc/rng.hpp"

#include <stdexcept>

namespace udc {

std::uint64_t mix64(std::uint64_t x) {
  // SplitMix64 finalizer.
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t frame,
                         std::uint64_t op) {
  return mix64(mix64(mix64(seed) ^ frame) ^ (op * 0xd1b54a32d192ed03ULL));
}

std::uint64_t CounterRng::bits_at(std::uint64_t counter) const {
  return mix64(key_ ^ mix64(counter));
}

double CounterRng::uniform_at(std::uint64_t counter) const {
  return static_cast<double>(bits_at(counter) >> 11) * 0x1.0p-53;
}

std::uint64_t CounterRng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("below(0)");
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_bits();
  } while (x >= limit);
  return x % n;
}

}  // namespace udc
