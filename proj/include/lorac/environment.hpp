#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "extnat.hpp"
#include "rng.hpp"

namespace lorac {

struct EnvironmentParams {
  double q_t = 0.5;
  double q_x = 0.5;
  double p = 0.5;
  double alpha = 2.0;

  void validate() const {
    if (!(q_t > 0.0 && q_t < 1.0)) throw std::invalid_argument("q_t must lie in (0,1)");
    if (!(q_x > 0.0 && q_x < 1.0)) throw std::invalid_argument("q_x must lie in (0,1)");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p must lie in [0,1]");
    if (!(alpha > 1.0)) throw std::invalid_argument("alpha must exceed 1");
  }
};

// Inclusive integer window [lo, hi].
struct Window {
  std::int64_t lo = 0;
  std::int64_t hi = -1;

  bool empty() const { return hi < lo; }
  std::size_t size() const { return empty() ? 0 : static_cast<std::size_t>(hi - lo + 1); }
  bool contains(std::int64_t i) const { return i >= lo && i <= hi; }
  bool on_boundary(std::int64_t i) const { return i == lo || i == hi; }
  friend bool operator==(const Window&, const Window&) = default;
};

inline Window centered_window(std::int64_t half_width) { return Window{-half_width, half_width}; }

class StretchSequence {
 public:
  StretchSequence() = default;
  StretchSequence(Window w, std::vector<ExtNat> values) : window_(w), values_(std::move(values)) {
    if (values_.size() != w.size()) throw std::invalid_argument("stretch count does not match window");
    check();
  }

  const Window& window() const { return window_; }
  std::size_t size() const { return values_.size(); }
  const std::vector<ExtNat>& values() const { return values_; }

  const ExtNat& at(std::int64_t i) const {
    if (!window_.contains(i)) throw std::out_of_range("index " + std::to_string(i) + " outside window");
    return values_[static_cast<std::size_t>(i - window_.lo)];
  }

  void set(std::int64_t i, ExtNat v) {
    if (!window_.contains(i)) throw std::out_of_range("index " + std::to_string(i) + " outside window");
    values_[static_cast<std::size_t>(i - window_.lo)] = v;
    check();
  }

  std::optional<std::int64_t> infinite_index() const {
    for (std::size_t k = 0; k < values_.size(); ++k)
      if (values_[k].is_inf()) return window_.lo + static_cast<std::int64_t>(k);
    return std::nullopt;
  }

  friend bool operator==(const StretchSequence& a, const StretchSequence& b) {
    return a.window_ == b.window_ && a.values_ == b.values_;
  }

 private:
  void check() const {
    int infs = 0;
    for (const auto& v : values_) {
      if (v.is_inf()) ++infs;
      else if (v.value() < 1) throw std::invalid_argument("stretch values must be >= 1");
    }
    if (infs > 1) throw std::invalid_argument("at most one infinite stretch allowed");
  }

  Window window_;
  std::vector<ExtNat> values_;
};

inline std::uint64_t sample_geometric(double q, Stream& stream) {
  // P(N >= l+1) = q^l
  double k = std::floor(std::log(stream.uniform()) / std::log(q));
  return 1 + static_cast<std::uint64_t>(k);
}

inline StretchSequence sample_geometric_stretches(double q, Window window, Stream& stream) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("q must lie in (0,1)");
  if (window.empty()) throw std::invalid_argument("empty window");
  std::vector<ExtNat> v;
  v.reserve(window.size());
  for (std::size_t k = 0; k < window.size(); ++k) v.emplace_back(sample_geometric(q, stream));
  return StretchSequence(window, std::move(v));
}

// bits[k] sits at position first_pos + k. The first 1 at position >= 0 becomes
// index 0; each 1 gets 1 + (zeros until the next 1). The trailing 1 has no
// closing 1 inside the window and is dropped.
inline StretchSequence condense_bernoulli(const std::vector<std::uint8_t>& bits, std::int64_t first_pos = 0) {
  std::vector<std::int64_t> ones;
  for (std::size_t k = 0; k < bits.size(); ++k)
    if (bits[k]) ones.push_back(first_pos + static_cast<std::int64_t>(k));
  std::size_t anchor = ones.size();
  for (std::size_t k = 0; k < ones.size(); ++k)
    if (ones[k] >= 0) {
      anchor = k;
      break;
    }
  if (anchor == ones.size()) throw std::invalid_argument("no anchor");
  if (ones.size() < 2 || anchor + 1 >= ones.size()) throw std::invalid_argument("no closing 1 after the anchor");
  std::vector<ExtNat> v;
  for (std::size_t k = 0; k + 1 < ones.size(); ++k) v.emplace_back(static_cast<std::uint64_t>(ones[k + 1] - ones[k]));
  auto lo = -static_cast<std::int64_t>(anchor);
  Window w{lo, lo + static_cast<std::int64_t>(v.size()) - 1};
  return StretchSequence(w, std::move(v));
}

struct BitExpansion {
  std::vector<std::uint8_t> bits;
  std::int64_t first_pos = 0;
};

// Inverse of condense_bernoulli: index 0 lands at position 0.
inline BitExpansion expand_to_bits(const StretchSequence& n) {
  BitExpansion out;
  std::int64_t before = 0;
  for (std::int64_t i = n.window().lo; i < 0 && i <= n.window().hi; ++i) before += static_cast<std::int64_t>(n.at(i).value());
  out.first_pos = -before;
  for (const auto& v : n.values()) {
    out.bits.push_back(1);
    for (std::uint64_t z = 1; z < v.value(); ++z) out.bits.push_back(0);
  }
  out.bits.push_back(1);
  return out;
}

// d[x,y] = sum_{i=min}^{max-1} N_i
inline ExtNat distance(std::int64_t x, std::int64_t y, const StretchSequence& nx) {
  if (!nx.window().contains(x) || !nx.window().contains(y)) throw std::out_of_range("distance index outside window");
  if (x > y) std::swap(x, y);
  ExtNat d(0);
  for (std::int64_t i = x; i < y; ++i) d += nx.at(i);
  return d;
}

// O(1) distances via prefix sums; spatial stretches are finite.
class SpatialMetric {
 public:
  SpatialMetric() = default;
  explicit SpatialMetric(const StretchSequence& nx) : window_(nx.window()) {
    prefix_.assign(nx.size() + 1, 0);
    for (std::size_t k = 0; k < nx.size(); ++k) {
      if (nx.values()[k].is_inf()) throw std::invalid_argument("spatial stretches must be finite");
      prefix_[k + 1] = prefix_[k] + nx.values()[k].value();
    }
  }
  const Window& window() const { return window_; }
  std::uint64_t operator()(std::int64_t x, std::int64_t y) const {
    if (x > y) std::swap(x, y);
    return prefix_[static_cast<std::size_t>(y - window_.lo)] - prefix_[static_cast<std::size_t>(x - window_.lo)];
  }

 private:
  Window window_;
  std::vector<std::uint64_t> prefix_;
};

struct TimeRescaled {
  double p = 0.0;
  Window window;
  std::vector<double> stretch;  // gamma * N, +inf for an infinite stretch

  double open_prob(std::int64_t t) const {
    double s = stretch.at(static_cast<std::size_t>(t - window.lo));
    if (std::isinf(s)) return 0.0;
    return std::pow(p, s);
  }
};

inline TimeRescaled rescale_time(double p, const StretchSequence& nt, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  TimeRescaled r;
  r.p = std::pow(p, 1.0 / gamma);
  r.window = nt.window();
  for (const auto& v : nt.values())
    r.stretch.push_back(v.is_inf() ? HUGE_VAL : gamma * static_cast<double>(v.value()));
  return r;
}

struct SpaceRescaled {
  StretchSequence nx;
  double alpha = 0.0;
};

inline SpaceRescaled rescale_space(const StretchSequence& nx, double alpha, double gamma) {
  if (!(gamma >= 1.0)) throw std::invalid_argument("gamma must be >= 1");
  std::vector<ExtNat> v;
  for (const auto& n : nx.values()) {
    if (n.is_inf()) v.push_back(n);
    else v.emplace_back(static_cast<std::uint64_t>(std::ceil(static_cast<double>(n.value()) / gamma)));
  }
  return SpaceRescaled{StretchSequence(nx.window(), std::move(v)), gamma * alpha};
}

struct DominanceCheck {
  double lhs = 0.0;  // (1 + sum N)^-alpha
  double rhs = 0.0;  // (1 + sum ceil(N/gamma))^-(gamma alpha)
  bool holds() const { return lhs <= rhs; }
};

inline DominanceCheck space_dominance(const std::vector<std::uint64_t>& n, double alpha, double gamma) {
  double s = 0.0, sc = 0.0;
  for (auto v : n) {
    s += static_cast<double>(v);
    sc += std::ceil(static_cast<double>(v) / gamma);
  }
  return DominanceCheck{std::pow(1.0 + s, -alpha), std::pow(1.0 + sc, -gamma * alpha)};
}

inline StretchSequence pin_origin(const StretchSequence& nt) {
  if (nt.infinite_index()) throw std::invalid_argument("already pinned");
  if (!nt.window().contains(0)) throw std::out_of_range("window does not contain the origin");
  StretchSequence out = nt;
  out.set(0, ExtNat::infinity());
  return out;
}

struct EnvironmentHeader {
  double q = 0.0;
  Window window;
  std::uint64_t seed = 0;
};

inline void write_environment(std::ostream& os, const StretchSequence& n, const EnvironmentHeader& h) {
  std::ostringstream q;
  q.precision(17);
  q << h.q;
  os << "# q=" << q.str() << " window=" << h.window.lo << ":" << h.window.hi << " seed=" << h.seed << "\n";
  for (std::int64_t i = n.window().lo; i <= n.window().hi; ++i) os << i << "\t" << n.at(i).str() << "\n";
}

inline StretchSequence read_environment(std::istream& is, EnvironmentHeader* header = nullptr) {
  std::string line;
  std::vector<std::pair<std::int64_t, ExtNat>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (header) {
        std::istringstream hs(line.substr(1));
        std::string tok;
        while (hs >> tok) {
          auto eq = tok.find('=');
          if (eq == std::string::npos) continue;
          auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
          if (key == "q") header->q = std::stod(val);
          else if (key == "seed") header->seed = std::stoull(val);
          else if (key == "window") {
            auto c = val.find(':');
            header->window = Window{std::stoll(val.substr(0, c)), std::stoll(val.substr(c + 1))};
          }
        }
      }
      continue;
    }
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("malformed environment line: " + line);
    rows.emplace_back(std::stoll(line.substr(0, tab)), ExtNat::parse(line.substr(tab + 1)));
  }
  if (rows.empty()) throw std::runtime_error("empty environment file");
  Window w{rows.front().first, rows.back().first};
  std::vector<ExtNat> v;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].first != w.lo + static_cast<std::int64_t>(k)) throw std::runtime_error("environment indices not contiguous");
    v.push_back(rows[k].second);
  }
  return StretchSequence(w, std::move(v));
}

}  // namespace lorac
