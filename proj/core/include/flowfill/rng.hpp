#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace flowfill {

// Seedable random stream used for every stochastic step (masks, partitions,
// weight init, shuffling, naive imputation).
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. All derived draws (uniform reals, bounded integers, normals) are
// computed here from raw 64-bit words rather than through <random>
// distributions, whose algorithms are implementation-defined.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64";

  explicit RngStream(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_index(std::uint64_t bound);

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller.
  double normal();

  // Independent child stream keyed by tag; does not advance this stream.
  RngStream derive(std::uint64_t tag) const;
  RngStream derive(std::string_view tag) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace flowfill
