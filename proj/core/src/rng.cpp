#include "flowfill/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "flowfill/types.hpp"

namespace flowfill {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_index(std::uint64_t bound) {
  if (bound == 0) throw UsageError("uniform_index: bound must be positive");
  // Rejection sampling on the largest multiple of bound.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return draw % bound;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

RngStream RngStream::derive(std::uint64_t tag) const {
  return RngStream(splitmix64(seed_ ^ splitmix64(tag)));
}

RngStream RngStream::derive(std::string_view tag) const {
  // FNV-1a over the tag bytes.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return derive(h);
}

}  // namespace flowfill
