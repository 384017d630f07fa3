#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace lorac {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum class Purpose : std::uint64_t {
  env_time = 1,
  env_space = 2,
  vertex = 3,
  edge = 4,
  trial = 5,
  audit = 6,
  fixture = 7,
};

// Stream key from (master seed, purpose, indices...).
inline std::uint64_t derive_key(std::uint64_t seed, Purpose tag, std::initializer_list<std::int64_t> idx = {}) {
  std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(tag) * 0xD1B54A32D192ED03ULL));
  for (std::int64_t i : idx) h = mix64(h ^ static_cast<std::uint64_t>(i));
  return h;
}

inline double to_unit_open(std::uint64_t bits) {
  // (0,1), never 0 so log() is finite
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

// Counter-based stream; splitmix64 seeded at the key.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t key = 0) : state_(key) {}
  Stream(std::uint64_t seed, Purpose tag, std::initializer_list<std::int64_t> idx = {})
      : state_(derive_key(seed, tag, idx)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform() { return to_unit_open((*this)()); }

  // failures before the first success, success probability b in (0,1]
  std::uint64_t geometric_skip(double b) {
    if (b >= 1.0) return 0;
    if (b <= 0.0) return std::numeric_limits<std::uint64_t>::max();
    double k = std::floor(std::log(uniform()) / std::log1p(-b));
    if (!(k < 9.0e18)) return std::numeric_limits<std::uint64_t>::max();
    return static_cast<std::uint64_t>(k);
  }

  std::uint64_t key() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace lorac
