#include "emapg/rng.hpp"

#include <cmath>
#include <numbers>

namespace emapg {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t trial, std::string_view purpose) {
  std::uint64_t k = mix64(seed + kGolden);
  k = mix64(k ^ (trial + 0x632BE59BD9B4E019ULL));
  return mix64(k ^ hash_tag(purpose));
}

CounterRng::result_type CounterRng::at(std::uint64_t n) const {
  return mix64(key_ + (n + 1) * kGolden);
}

double CounterRng::uniform() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double CounterRng::normal() {
  // 1 - u lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace emapg
