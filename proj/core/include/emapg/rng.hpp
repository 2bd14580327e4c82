#pragma once

// Counter-based random streams.
//
// Generator: "splitmix64-ctr". A stream is keyed by a 64-bit key derived from
// (seed, trial, purpose). Draw n of a stream is
//     mix64(key + (n + 1) * 0x9E3779B97F4A7C15)
// where mix64 is the SplitMix64 finalizer. Each draw is a pure function of
// (key, n), so any draw can be reproduced without replaying the stream.

#include <cstdint>
#include <limits>
#include <string_view>

namespace emapg {

inline constexpr std::string_view kRngAlgorithm = "splitmix64-ctr";

std::uint64_t mix64(std::uint64_t x);

// 64-bit FNV-1a, used to turn purpose tags into stream keys.
std::uint64_t hash_tag(std::string_view tag);

// Key of the stream for (seed, trial, purpose).
std::uint64_t stream_key(std::uint64_t seed, std::uint64_t trial, std::string_view purpose);

class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::uint64_t seed, std::uint64_t trial, std::string_view purpose)
      : key_(stream_key(seed, trial, purpose)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return at(counter_++); }
  result_type at(std::uint64_t n) const;

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  // Standard normal via Box-Muller; consumes two draws per call.
  double normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace emapg
