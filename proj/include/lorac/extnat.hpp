#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

namespace lorac {

// Natural number extended by infinity.
class ExtNat {
 public:
  constexpr ExtNat() = default;
  constexpr ExtNat(std::uint64_t v) : v_(v) {}

  static constexpr ExtNat infinity() {
    ExtNat e;
    e.inf_ = true;
    return e;
  }

  constexpr bool is_inf() const { return inf_; }
  constexpr bool finite() const { return !inf_; }

  std::uint64_t value() const {
    if (inf_) throw std::domain_error("value() of infinite ExtNat");
    return v_;
  }

  // finite part, or the given fallback for infinity
  constexpr std::uint64_t value_or(std::uint64_t fallback) const { return inf_ ? fallback : v_; }

  friend constexpr bool operator==(const ExtNat& a, const ExtNat& b) {
    return a.inf_ == b.inf_ && (a.inf_ || a.v_ == b.v_);
  }
  friend constexpr std::strong_ordering operator<=>(const ExtNat& a, const ExtNat& b) {
    if (a.inf_ || b.inf_) return a.inf_ <=> b.inf_;
    return a.v_ <=> b.v_;
  }

  friend constexpr ExtNat operator+(const ExtNat& a, const ExtNat& b) {
    if (a.inf_ || b.inf_) return infinity();
    return ExtNat(a.v_ + b.v_);
  }
  ExtNat& operator+=(const ExtNat& o) { return *this = *this + o; }

  std::string str() const { return inf_ ? std::string("inf") : std::to_string(v_); }

  static ExtNat parse(const std::string& s) {
    if (s == "inf") return infinity();
    std::size_t used = 0;
    unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument("bad extended natural: " + s);
    return ExtNat(v);
  }

  friend std::ostream& operator<<(std::ostream& os, const ExtNat& e) { return os << e.str(); }

 private:
  std::uint64_t v_ = 0;
  bool inf_ = false;
};

inline constexpr std::uint64_t kSatMax = std::numeric_limits<std::uint64_t>::max();

// base^exp, saturating at kSatMax
constexpr std::uint64_t pow_sat(std::uint64_t base, std::uint64_t exp) {
  std::uint64_t r = 1;
  for (std::uint64_t i = 0; i < exp; ++i) {
    unsigned __int128 t = static_cast<unsigned __int128>(r) * base;
    if (t >= kSatMax) return kSatMax;
    r = static_cast<std::uint64_t>(t);
    if (r == 0) return 0;
  }
  return r;
}

constexpr std::uint64_t mul_sat(std::uint64_t a, std::uint64_t b) {
  unsigned __int128 t = static_cast<unsigned __int128>(a) * b;
  return t >= kSatMax ? kSatMax : static_cast<std::uint64_t>(t);
}

constexpr std::uint64_t add_sat(std::uint64_t a, std::uint64_t b) {
  return a > kSatMax - b ? kSatMax : a + b;
}

// x < base^exp, exact for x < kSatMax
constexpr bool less_than_pow(std::uint64_t x, std::uint64_t base, std::uint64_t exp) {
  return x < pow_sat(base, exp);
}

// max { t >= 0 : base^(t*d_inv) <= x }, i.e. floor(log_base(x) / d_inv)
constexpr std::uint64_t floor_log_div(std::uint64_t x, std::uint64_t base, std::uint64_t d_inv) {
  std::uint64_t t = 0;
  while (pow_sat(base, (t + 1) * d_inv) <= x && pow_sat(base, (t + 1) * d_inv) != kSatMax) ++t;
  return t;
}

}  // namespace lorac
