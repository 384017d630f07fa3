#pragma once

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "environment.hpp"
#include "extnat.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace lorac {

using BigInt = boost::multiprecision::cpp_int;

struct MergeParams {
  std::uint64_t s = 32;
  std::uint64_t d_inv = 12;

  void validate() const {
    if (s < 32) throw std::invalid_argument("s must be >= 32");
    if (d_inv < 12) throw std::invalid_argument("d_inv must be >= 12");
  }
  // (12 s)^2
  std::uint64_t short_range() const { return mul_sat(12 * s, 12 * s); }
};

// rank of x in the order 0, -1, 1, -2, 2, ...
constexpr std::uint64_t index_rank(std::int64_t x) {
  return x >= 0 ? 2 * static_cast<std::uint64_t>(x) : 2 * static_cast<std::uint64_t>(-x) - 1;
}
constexpr std::int64_t rank_index(std::uint64_t r) {
  return r % 2 == 0 ? static_cast<std::int64_t>(r / 2) : -static_cast<std::int64_t>((r + 1) / 2);
}

struct BandNode {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  ExtNat label;
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::vector<std::int32_t> inner;  // bands strictly between left and right when merged
  std::int64_t k = 0;               // merged at step k -> k+1
  std::uint64_t D = 0;
  std::int64_t i = 0;
  std::int64_t j = 0;

  bool leaf() const { return left < 0; }
  std::uint64_t extent() const { return static_cast<std::uint64_t>(hi - lo + 1); }
};

struct MergeChoice {
  std::size_t pos_a = 0;  // pos_a < pos_b, positions in the current partition
  std::size_t pos_b = 0;
  std::int64_t i = 0;
  std::int64_t j = 0;
};

struct MergeRecord {
  std::int64_t k = 0;
  std::int64_t i = 0;
  std::int64_t j = 0;
  std::uint64_t D = 0;
  ExtNat label;
};

class BandPartition {
 public:
  BandPartition() = default;

  BandPartition(const StretchSequence& n, MergeParams params) : params_(params), window_(n.window()) {
    params_.validate();
    if (window_.empty()) throw std::invalid_argument("empty window");
    nodes_.reserve(2 * n.size());
    for (std::int64_t x = window_.lo; x <= window_.hi; ++x) {
      BandNode b;
      b.lo = b.hi = x;
      b.label = n.at(x);
      current_.push_back(static_cast<std::int32_t>(nodes_.size()));
      nodes_.push_back(std::move(b));
    }
  }

  // Singleton bands taken as final; used for hand-built hierarchies.
  static BandPartition fixture(const StretchSequence& n, MergeParams params) {
    BandPartition p(n, params);
    p.terminal_ = true;
    return p;
  }

  const MergeParams& params() const { return params_; }
  const Window& window() const { return window_; }
  std::size_t merges() const { return merges_; }
  bool terminal() const { return terminal_; }
  const std::vector<BandNode>& nodes() const { return nodes_; }
  const BandNode& node(std::int32_t id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::int32_t>& current() const { return current_; }
  std::size_t band_count() const { return current_.size(); }
  const BandNode& band(std::size_t pos) const { return nodes_[static_cast<std::size_t>(current_.at(pos))]; }
  std::size_t leaf_count() const { return window_.size(); }

  // f_1(x)
  const ExtNat& stretch(std::int64_t x) const {
    if (!window_.contains(x)) throw std::out_of_range("index outside window");
    return nodes_[static_cast<std::size_t>(x - window_.lo)].label;
  }

  std::size_t position_of(std::int64_t x) const {
    if (!window_.contains(x)) throw std::out_of_range("index " + std::to_string(x) + " outside window");
    auto it = std::partition_point(current_.begin(), current_.end(),
                                   [&](std::int32_t id) { return nodes_[static_cast<std::size_t>(id)].hi < x; });
    return static_cast<std::size_t>(it - current_.begin());
  }

  const ExtNat& label_at(std::int64_t x) const { return band(position_of(x)).label; }

  bool censored(std::int32_t id) const {
    const auto& b = node(id);
    return b.lo == window_.lo || b.hi == window_.hi;
  }
  bool censored_pos(std::size_t pos) const { return censored(current_.at(pos)); }

  std::uint64_t count_between(std::int64_t i, std::int64_t j) const {
    std::size_t a = position_of(i), b = position_of(j);
    if (a == b) throw std::invalid_argument("indices lie in the same band");
    return (a < b ? b - a : a - b) - 1;
  }

  // 1 + D < s^(min label - 1); an infinite label defers to its partner
  bool valid_positions(std::size_t a, std::size_t b) const {
    if (a == b) return false;
    return valid_labels(band(a).label, band(b).label, (a < b ? b - a : a - b) - 1);
  }

  bool valid_labels(const ExtNat& la, const ExtNat& lb, std::uint64_t D) const {
    ExtNat m = std::min(la, lb);
    if (m.is_inf() || m.value() < 2) return false;
    return less_than_pow(D + 1, params_.s, m.value() - 1);
  }

  bool candidate_valid(std::int64_t i, std::int64_t j) const {
    std::size_t a = position_of(i), b = position_of(j);
    if (a == b) throw std::invalid_argument("indices lie in the same band");
    return valid_positions(a, b);
  }

  std::optional<MergeChoice> find_merging_indices() const;
  // Literal index scan; quadratic per step, for cross-checking on small windows.
  std::optional<MergeChoice> find_merging_indices_reference() const;

  void apply(const MergeChoice& c) {
    if (c.pos_a >= c.pos_b || c.pos_b >= current_.size()) throw std::invalid_argument("bad merge positions");
    auto ida = current_[c.pos_a], idb = current_[c.pos_b];
    BandNode nb;
    nb.lo = node(ida).lo;
    nb.hi = node(idb).hi;
    nb.D = c.pos_b - c.pos_a - 1;
    const ExtNat& la = node(ida).label;
    const ExtNat& lb = node(idb).label;
    if (la.is_inf() || lb.is_inf()) nb.label = ExtNat::infinity();
    else nb.label = ExtNat(la.value() + lb.value() - floor_log_div(nb.D + 1, params_.s, params_.d_inv));
    nb.left = ida;
    nb.right = idb;
    nb.inner.assign(current_.begin() + static_cast<std::ptrdiff_t>(c.pos_a) + 1,
                    current_.begin() + static_cast<std::ptrdiff_t>(c.pos_b));
    nb.k = static_cast<std::int64_t>(merges_) + 1;
    nb.i = c.i;
    nb.j = c.j;
    auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(std::move(nb));
    current_.erase(current_.begin() + static_cast<std::ptrdiff_t>(c.pos_a) + 1,
                   current_.begin() + static_cast<std::ptrdiff_t>(c.pos_b) + 1);
    current_[c.pos_a] = id;
    ++merges_;
  }

  // false once no candidate remains
  bool merge_step() {
    if (terminal_) return false;
    auto c = find_merging_indices();
    if (!c) {
      terminal_ = true;
      return false;
    }
    apply(*c);
    return true;
  }

  bool run(std::size_t max_steps) {
    for (std::size_t n = 0; n < max_steps && merge_step();) ++n;
    if (!terminal_ && !find_merging_indices()) terminal_ = true;
    return terminal_;
  }

  std::vector<MergeRecord> history() const {
    std::vector<MergeRecord> out;
    for (std::size_t id = leaf_count(); id < nodes_.size(); ++id) {
      const auto& b = nodes_[id];
      out.push_back(MergeRecord{b.k, b.i, b.j, b.D, b.label});
    }
    return out;
  }

  static BandPartition replay(const StretchSequence& n, MergeParams params, const std::vector<MergeRecord>& records) {
    BandPartition p(n, params);
    for (const auto& r : records) {
      std::size_t a = p.position_of(r.i), b = p.position_of(r.j);
      if (a > b) std::swap(a, b);
      if (a == b) throw std::runtime_error("replay: merge indices share a band at step " + std::to_string(r.k));
      p.apply(MergeChoice{a, b, r.i, r.j});
      const auto& nb = p.nodes_.back();
      if (nb.D != r.D || nb.label != r.label) throw std::runtime_error("replay diverged at step " + std::to_string(r.k));
    }
    p.terminal_ = !p.find_merging_indices().has_value();
    return p;
  }

  std::vector<std::pair<std::int64_t, std::int64_t>> intervals() const {
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (auto id : current_) out.emplace_back(node(id).lo, node(id).hi);
    return out;
  }

  std::vector<ExtNat> labels() const {
    std::vector<ExtNat> out;
    for (auto id : current_) out.push_back(node(id).label);
    return out;
  }

 private:
  static std::uint64_t dist1(std::size_t a, std::size_t b) { return a == b ? 1 : (a < b ? b - a : a - b); }

  MergeParams params_;
  Window window_;
  std::vector<BandNode> nodes_;
  std::vector<std::int32_t> current_;
  std::size_t merges_ = 0;
  bool terminal_ = false;
};

inline std::optional<MergeChoice> BandPartition::find_merging_indices() const {
  struct Heavy {
    std::size_t pos;
    ExtNat label;
    std::uint64_t a;  // min |x| over the band
    std::uint64_t r;  // min rank over the band
  };
  std::vector<Heavy> heavy;
  for (std::size_t pos = 0; pos < current_.size(); ++pos) {
    const auto& b = nodes_[static_cast<std::size_t>(current_[pos])];
    if (b.label < ExtNat(2) || b.lo == window_.lo || b.hi == window_.hi) continue;
    Heavy h{pos, b.label, 0, 0};
    if (b.hi < 0) h.a = static_cast<std::uint64_t>(-b.hi), h.r = index_rank(b.hi);
    else if (b.lo > 0) h.a = static_cast<std::uint64_t>(b.lo), h.r = index_rank(b.lo);
    heavy.push_back(h);
  }
  if (heavy.size() < 2) return std::nullopt;

  auto valid = [&](const Heavy& x, const Heavy& y) {
    return valid_labels(x.label, y.label, (x.pos < y.pos ? y.pos - x.pos : x.pos - y.pos) - 1);
  };

  // Labels >= lsat pair up at any distance inside the window.
  std::uint64_t lsat = 2;
  while (!(pow_sat(params_.s, lsat - 1) > current_.size())) ++lsat;
  const std::size_t classes = static_cast<std::size_t>(lsat - 1);
  auto cls = [&](const ExtNat& l) {
    return l.is_inf() || l.value() >= lsat ? classes - 1 : static_cast<std::size_t>(l.value() - 2);
  };

  std::vector<std::size_t> order(heavy.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return heavy[x].a != heavy[y].a ? heavy[x].a < heavy[y].a : heavy[x].r < heavy[y].r;
  });

  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> leftmost(classes, none), rightmost(classes, none);
  std::size_t block_lo = none;
  std::optional<std::uint64_t> astar;
  for (std::size_t h : order) {
    const auto& cur = heavy[h];
    if (block_lo != none) {
      bool left_side = cur.pos < heavy[block_lo].pos;
      for (std::size_t c = 0; c < classes && !astar; ++c) {
        std::size_t partner = left_side ? leftmost[c] : rightmost[c];
        if (partner != none && valid(cur, heavy[partner])) astar = cur.a;
      }
      if (astar) break;
    }
    std::size_t c = cls(cur.label);
    if (leftmost[c] == none || heavy[h].pos < heavy[leftmost[c]].pos) leftmost[c] = h;
    if (rightmost[c] == none || heavy[h].pos > heavy[rightmost[c]].pos) rightmost[c] = h;
    if (block_lo == none || cur.pos < heavy[block_lo].pos) block_lo = h;
  }
  if (!astar) return std::nullopt;
  const std::uint64_t a = *astar;

  auto heavy_at = [&](std::int64_t x) -> std::size_t {
    if (!window_.contains(x)) return none;
    std::size_t pos = position_of(x);
    auto it = std::lower_bound(heavy.begin(), heavy.end(), pos, [](const Heavy& hv, std::size_t p) { return hv.pos < p; });
    return it != heavy.end() && it->pos == pos ? static_cast<std::size_t>(it - heavy.begin()) : none;
  };
  // best partner of heavy[x] among bands with a <= a*, by min rank
  auto best_partner = [&](std::size_t x) -> std::size_t {
    std::size_t best = none;
    for (std::size_t y = 0; y < heavy.size(); ++y) {
      if (y == x || heavy[y].a > a || !valid(heavy[x], heavy[y])) continue;
      if (best == none || heavy[y].r < heavy[best].r) best = y;
    }
    return best;
  };

  auto sa = static_cast<std::int64_t>(a);
  std::int64_t istar = -sa;
  std::size_t X = heavy_at(-sa), Y = none;
  if (X != none) Y = best_partner(X);
  if (Y == none) {
    istar = sa;
    X = heavy_at(sa);
    if (X == none) throw std::logic_error("merge search lost its candidate band");
    Y = best_partner(X);
    if (Y == none) throw std::logic_error("merge search lost its candidate partner");
  }
  std::int64_t jstar = rank_index(heavy[Y].r);
  auto choice = [&](std::size_t u, std::size_t v, std::int64_t i, std::int64_t j) {
    return MergeChoice{std::min(heavy[u].pos, heavy[v].pos), std::max(heavy[u].pos, heavy[v].pos), i, j};
  };

  const std::uint64_t bound = params_.short_range();
  if (dist1(heavy[X].pos, heavy[Y].pos) < bound) return choice(X, Y, istar, jstar);

  // Look for a short-range pair whose j' is near i or j.
  std::vector<std::size_t> zs;
  for (std::size_t z = 0; z < heavy.size(); ++z)
    if (dist1(heavy[X].pos, heavy[z].pos) < bound || dist1(heavy[Y].pos, heavy[z].pos) < bound) zs.push_back(z);
  std::sort(zs.begin(), zs.end(), [&](std::size_t u, std::size_t v) { return heavy[u].r < heavy[v].r; });
  for (std::size_t z : zs) {
    std::size_t best = none;
    std::uint64_t bestD = 0;
    for (std::size_t w = 0; w < heavy.size(); ++w) {
      if (w == z || !valid(heavy[z], heavy[w])) continue;
      std::uint64_t d1 = dist1(heavy[z].pos, heavy[w].pos);
      if (d1 >= bound) continue;
      if (best == none || d1 < bestD || (d1 == bestD && heavy[w].r < heavy[best].r)) best = w, bestD = d1;
    }
    if (best != none) return choice(best, z, rank_index(heavy[best].r), rank_index(heavy[z].r));
  }
  return choice(X, Y, istar, jstar);
}

inline std::optional<MergeChoice> BandPartition::find_merging_indices_reference() const {
  auto usable = [&](std::size_t pos) { return !censored_pos(pos); };
  const std::uint64_t max_abs = static_cast<std::uint64_t>(std::max(std::abs(window_.lo), std::abs(window_.hi)));
  const std::uint64_t max_rank = 2 * max_abs + 1;
  std::optional<std::int64_t> fi, fj;
  for (std::uint64_t ri = 0; ri <= max_rank && !fi; ++ri) {
    std::int64_t i = rank_index(ri);
    if (!window_.contains(i)) continue;
    std::size_t pi = position_of(i);
    if (!usable(pi)) continue;
    for (std::uint64_t rj = 0; rj <= 2 * static_cast<std::uint64_t>(std::abs(i)); ++rj) {
      std::int64_t j = rank_index(rj);
      if (!window_.contains(j) || std::abs(j) > std::abs(i)) continue;
      std::size_t pj = position_of(j);
      if (pj == pi || !usable(pj) || !valid_positions(pi, pj)) continue;
      fi = i;
      fj = j;
      break;
    }
  }
  if (!fi) return std::nullopt;
  std::size_t pi = position_of(*fi), pj = position_of(*fj);
  const std::uint64_t bound = params_.short_range();
  if (dist1(pi, pj) < bound) return MergeChoice{std::min(pi, pj), std::max(pi, pj), *fi, *fj};
  for (std::uint64_t rz = 0; rz <= max_rank; ++rz) {
    std::int64_t jp = rank_index(rz);
    if (!window_.contains(jp)) continue;
    std::size_t pz = position_of(jp);
    if (!usable(pz) || !(dist1(pi, pz) < bound || dist1(pj, pz) < bound)) continue;
    std::optional<std::int64_t> best;
    std::uint64_t bestD = 0;
    std::size_t bestPos = 0;
    for (std::int64_t ip = window_.lo; ip <= window_.hi; ++ip) {
      std::size_t pw = position_of(ip);
      if (pw == pz || !usable(pw) || !valid_positions(pz, pw) || dist1(pz, pw) >= bound) continue;
      std::uint64_t d1 = dist1(pz, pw);
      if (!best || d1 < bestD || (d1 == bestD && index_rank(ip) < index_rank(*best))) best = ip, bestD = d1, bestPos = pw;
    }
    if (best) return MergeChoice{std::min(pz, bestPos), std::max(pz, bestPos), *best, jp};
  }
  return MergeChoice{std::min(pi, pj), std::max(pi, pj), *fi, *fj};
}

inline BandPartition init_bands(const StretchSequence& n, MergeParams params) { return BandPartition(n, params); }

// Result is flagged non-terminal when max_steps ran out.
inline BandPartition run_to_fixpoint(const StretchSequence& n, MergeParams params, std::size_t max_steps = 1000000) {
  if (max_steps == 0) throw std::invalid_argument("max_steps must be positive");
  BandPartition p(n, params);
  p.run(max_steps);
  return p;
}

struct EnumeratedBand {
  std::int64_t m = 0;
  std::int32_t id = -1;
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  ExtNat label;
  bool censored = false;
};

inline std::vector<EnumeratedBand> enumerate_bands(const BandPartition& p) {
  auto origin = static_cast<std::int64_t>(p.position_of(0));
  std::vector<EnumeratedBand> out;
  for (std::size_t pos = 0; pos < p.band_count(); ++pos) {
    auto id = p.current()[pos];
    const auto& b = p.node(id);
    out.push_back(EnumeratedBand{static_cast<std::int64_t>(pos) - origin, id, b.lo, b.hi, b.label, p.censored(id)});
  }
  return out;
}

// Positions of interior final bands with label >= l.
inline std::vector<std::size_t> interior_at_least(const BandPartition& p, std::uint64_t l) {
  std::vector<std::size_t> out;
  for (std::size_t pos = 0; pos < p.band_count(); ++pos)
    if (!p.censored_pos(pos) && p.band(pos).label >= ExtNat(l)) out.push_back(pos);
  return out;
}

// Open interval (left_end, right_start) between neighbouring bands.
struct Segment {
  std::int64_t left_end = 0;
  std::int64_t right_start = 0;
  std::size_t bands = 0;
};

struct SegmentList {
  std::vector<Segment> segments;
  bool boundary = false;
};

inline SegmentList segments(const BandPartition& p, std::uint64_t l) {
  SegmentList out;
  auto pos = interior_at_least(p, l);
  if (pos.size() < 2) {
    out.boundary = true;
    return out;
  }
  for (std::size_t k = 0; k + 1 < pos.size(); ++k)
    out.segments.push_back(Segment{p.band(pos[k]).hi, p.band(pos[k + 1]).lo, pos[k + 1] - pos[k] - 1});
  return out;
}

struct SpacingViolation {
  std::uint64_t level = 0;
  std::int64_t m1 = 0;
  std::int64_t m2 = 0;
  std::uint64_t distance = 0;
  bool lower = false;
};

struct RegularityReport {
  std::vector<SpacingViolation> violations;
  std::size_t lower_violations = 0;
  std::size_t upper_violations = 0;
  std::size_t pairs_checked = 0;
  std::uint64_t max_level = 0;
  bool regular() const { return violations.empty(); }
};

// Neighbouring interior label->=l pairs must sit at distance in [s^(l-1), factor * s^(l-1)).
inline RegularityReport is_regular(const BandPartition& p, std::uint64_t factor = 12) {
  RegularityReport rep;
  auto origin = static_cast<std::int64_t>(p.window().contains(0) ? p.position_of(0) : 0);
  for (std::uint64_t l = 1;; ++l) {
    auto pos = interior_at_least(p, l);
    if (pos.size() < 2) break;
    rep.max_level = l;
    std::uint64_t u = pow_sat(p.params().s, l - 1);
    for (std::size_t k = 0; k + 1 < pos.size(); ++k) {
      std::uint64_t d = pos[k + 1] - pos[k];
      ++rep.pairs_checked;
      bool lower = d < u, upper = d >= mul_sat(factor, u);
      if (!lower && !upper) continue;
      rep.violations.push_back(SpacingViolation{l, static_cast<std::int64_t>(pos[k]) - origin,
                                                static_cast<std::int64_t>(pos[k + 1]) - origin, d, lower});
      (lower ? rep.lower_violations : rep.upper_violations)++;
    }
  }
  return rep;
}

struct SegmentCountViolation {
  std::uint64_t level = 0;  // pair has label >= level+1, counted bands have label >= level
  std::size_t pos_a = 0;
  std::size_t pos_b = 0;
  std::uint64_t k = 0;
};

// Between neighbouring label->=(l+1) bands, k label->=l segments with ceil(s/12) <= k < 12 s.
inline std::vector<SegmentCountViolation> segment_count_audit(const BandPartition& p, std::size_t* pairs = nullptr) {
  std::vector<SegmentCountViolation> out;
  const std::uint64_t s = p.params().s, lo = (s + 11) / 12, hi = 12 * s;
  std::size_t checked = 0;
  for (std::uint64_t l = 1;; ++l) {
    auto top = interior_at_least(p, l + 1);
    if (top.size() < 2) break;
    for (std::size_t t = 0; t + 1 < top.size(); ++t) {
      std::uint64_t k = 0;
      for (std::size_t pos = top[t] + 1; pos <= top[t + 1]; ++pos)
        if (p.band(pos).label >= ExtNat(l)) ++k;
      ++checked;
      if (k < lo || k >= hi) out.push_back(SegmentCountViolation{l, top[t], top[t + 1], k});
    }
  }
  if (pairs) *pairs = checked;
  return out;
}

// Event A_l: every band with 1 <= |m| <= 12 s^l inside the window has label <= l.
inline bool high_labels_event(const BandPartition& p, std::uint64_t l) {
  auto reach = mul_sat(12, pow_sat(p.params().s, l));
  for (const auto& b : enumerate_bands(p)) {
    std::uint64_t am = static_cast<std::uint64_t>(b.m < 0 ? -b.m : b.m);
    if (am >= 1 && am <= reach && b.label > ExtNat(l)) return false;
  }
  return true;
}

struct GeneratorInfo {
  std::vector<std::int64_t> generators;  // ascending
  std::int64_t maximal = 0;              // smallest maximal generator
};

inline std::int64_t maximal_generator(const BandPartition& p, std::int32_t id) {
  while (!p.node(id).leaf()) {
    const auto& b = p.node(id);
    id = p.node(b.left).label >= p.node(b.right).label ? b.left : b.right;
  }
  return p.node(id).lo;
}

inline GeneratorInfo generators(const BandPartition& p, std::int32_t id) {
  GeneratorInfo g;
  std::vector<std::int32_t> stack{id};
  while (!stack.empty()) {
    auto v = stack.back();
    stack.pop_back();
    const auto& b = p.node(v);
    if (b.leaf()) g.generators.push_back(b.lo);
    else stack.push_back(b.left), stack.push_back(b.right);
  }
  std::sort(g.generators.begin(), g.generators.end());
  g.maximal = maximal_generator(p, id);
  return g;
}

struct LogDistCheck {
  std::uint64_t lhs = 0;  // sum floor(log2(gap + 1))
  std::uint64_t m = 0;    // sum of f_1 over generators
  double rhs = 0.0;       // C m
  bool applicable = true;
  bool ok() const { return !applicable || static_cast<double>(lhs) <= rhs; }
};

inline double log_dist_constant(const MergeParams& mp) {
  return 1.5 * static_cast<double>(mp.d_inv) * std::log2(static_cast<double>(mp.s)) + 0.5;
}

inline LogDistCheck log_dist_check(const BandPartition& p, std::int32_t id) {
  LogDistCheck c;
  auto g = generators(p, id).generators;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto& f = p.stretch(g[k]);
    if (f.is_inf()) {
      c.applicable = false;
      return c;
    }
    c.m += f.value();
    if (k > 0) c.lhs += std::bit_width(static_cast<std::uint64_t>(g[k] - g[k - 1] + 1)) - 1;
  }
  c.rhs = log_dist_constant(p.params()) * static_cast<double>(c.m);
  return c;
}

// N + 1 at the maximal generator of a final band.
inline StretchSequence raise_maximal_generator(const StretchSequence& n, const BandPartition& p, std::int32_t id) {
  auto it = std::find(p.current().begin(), p.current().end(), id);
  if (it == p.current().end()) throw std::invalid_argument("band is not a final band");
  const auto& label = p.node(id).label;
  if (label.is_inf()) throw std::invalid_argument("cannot raise an infinite label");
  auto pos = static_cast<std::size_t>(it - p.current().begin());
  std::uint64_t need = pow_sat(p.params().s, label.value());
  for (std::size_t q = 0; q < p.band_count(); ++q) {
    if (p.band(q).label <= label) continue;
    std::uint64_t d = q > pos ? q - pos : pos - q;
    if (d < need) throw std::invalid_argument("precondition violated: larger label within s^l");
  }
  auto g = maximal_generator(p, id);
  StretchSequence out = n;
  out.set(g, ExtNat(n.at(g).value() + 1));
  return out;
}

inline bool is_simple(const BandPartition& p, std::int32_t id) {
  const std::uint64_t bound = p.params().short_range();
  std::vector<std::int32_t> stack{id};
  while (!stack.empty()) {
    const auto& b = p.node(stack.back());
    stack.pop_back();
    if (b.leaf()) continue;
    if (b.D + 1 >= bound) return false;
    stack.push_back(b.left);
    stack.push_back(b.right);
  }
  return true;
}

inline BigInt big_pow(std::uint64_t base, std::uint64_t exp) {
  BigInt r = 1;
  for (std::uint64_t k = 0; k < exp; ++k) r *= base;
  return r;
}

// extent <= (s/2)^(l-1)
inline bool band_size_ok(const BandPartition& p, std::int32_t id) {
  const auto& b = p.node(id);
  if (b.label.is_inf()) return true;
  std::uint64_t l = b.label.value();
  return BigInt(b.extent()) * big_pow(2, l - 1) <= big_pow(p.params().s, l - 1);
}

struct BandWeight {
  ExtNat total;
  bool infinite = false;
  bool general_ok = true;      // total <= s^(l-1)
  bool simple_checked = false;
  bool simple_ok = true;       // total <= l + (13 s)^2 (l - 2) / 2
  bool ok() const { return general_ok && simple_ok; }
};

// The simple-band bound is only asserted for s >= 72.
inline BandWeight band_weight(const BandPartition& p, std::int32_t id) {
  const auto& b = p.node(id);
  BandWeight w;
  w.total = ExtNat(0);
  for (std::int64_t x = b.lo; x <= b.hi; ++x) w.total += p.stretch(x);
  if (b.label.is_inf() || w.total.is_inf()) {
    w.infinite = true;
    return w;
  }
  std::uint64_t l = b.label.value();
  BigInt total(w.total.value());
  w.general_ok = total <= big_pow(p.params().s, l - 1);
  if (l >= 2 && p.params().s >= 72 && is_simple(p, id)) {
    w.simple_checked = true;
    BigInt s13 = BigInt(13) * p.params().s;
    w.simple_ok = 2 * total <= 2 * BigInt(l) + s13 * s13 * (l - 2);
  }
  return w;
}

// ---- very regular bands ----

struct VRLocal {
  bool ok = true;
  std::uint64_t q = 0;
  std::size_t m = 0;  // number of q segments
  std::string reason;
};

namespace detail {

inline bool seg_very_regular(const std::vector<ExtNat>& run, std::size_t from, std::size_t to, std::uint64_t q,
                             std::uint64_t s, std::string* why) {
  auto fail = [&](const std::string& r) {
    if (why) *why = r;
    return false;
  };
  std::size_t len = to - from;
  if (q == 1) return len == 0 ? true : fail("nonempty 1 segment");
  std::uint64_t u = pow_sat(s, q - 1);
  if (len + 1 < u) return fail("level " + std::to_string(q) + " segment below s^(q-1)");
  if (len + 1 >= mul_sat(12, u)) return fail("level " + std::to_string(q) + " segment reaches 12 s^(q-1)");
  std::size_t start = from;
  for (std::size_t k = from; k < to; ++k) {
    if (run[k] >= ExtNat(q)) return fail("label >= q inside a q segment");
    if (run[k] == ExtNat(q - 1)) {
      if (!seg_very_regular(run, start, k, q - 1, s, why)) return false;
      start = k + 1;
    }
  }
  return seg_very_regular(run, start, to, q - 1, s, why);
}

inline VRLocal gap_decomposition(const std::vector<ExtNat>& labels, std::uint64_t s) {
  VRLocal out;
  ExtNat lmax(0);
  for (const auto& l : labels) lmax = std::max(lmax, l);
  if (lmax.is_inf()) return VRLocal{false, 0, 0, "infinite label inside a merge gap"};
  if (labels.empty()) return VRLocal{true, 1, 1, ""};
  std::uint64_t L = lmax.value();
  std::string why_a, why_b;
  // q = max inner label, label-q bands separate the q segments
  {
    std::size_t seps = 0;
    for (const auto& l : labels) seps += l == lmax;
    if (seps + 1 > 12 * s) why_a = "more than 12 s segments";
    else {
      std::size_t start = 0;
      bool ok = true;
      for (std::size_t k = 0; k <= labels.size() && ok; ++k) {
        if (k == labels.size() || labels[k] == lmax) {
          ok = seg_very_regular(labels, start, k, L, s, &why_a);
          start = k + 1;
        }
      }
      if (ok) return VRLocal{true, L, seps + 1, ""};
    }
  }
  if (seg_very_regular(labels, 0, labels.size(), L + 1, s, &why_b)) return VRLocal{true, L + 1, 1, ""};
  return VRLocal{false, 0, 0, why_a + "; " + why_b};
}

}  // namespace detail

inline VRLocal merge_gap_check(const BandPartition& p, std::int32_t id) {
  const auto& b = p.node(id);
  if (b.leaf()) return VRLocal{true, 0, 0, ""};
  std::vector<ExtNat> labels;
  for (auto v : b.inner) labels.push_back(p.node(v).label);
  return detail::gap_decomposition(labels, p.params().s);
}

struct VeryRegularReport {
  bool ok = true;
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::int32_t witness = -1;
  std::int64_t witness_lo = 0;
  std::int64_t witness_hi = 0;
  std::string reason;
  std::vector<VRLocal> local;  // indexed by node id
};

inline VeryRegularReport is_very_regular(const BandPartition& p) {
  VeryRegularReport rep;
  rep.local.resize(p.nodes().size());
  for (std::size_t id = p.leaf_count(); id < p.nodes().size(); ++id) {
    auto v = merge_gap_check(p, static_cast<std::int32_t>(id));
    ++rep.checked;
    if (!v.ok) {
      ++rep.failures;
      if (rep.ok) {
        rep.ok = false;
        rep.witness = static_cast<std::int32_t>(id);
        rep.witness_lo = p.nodes()[id].lo;
        rep.witness_hi = p.nodes()[id].hi;
        rep.reason = v.reason;
      }
    }
    rep.local[id] = std::move(v);
  }
  return rep;
}

inline bool same_bands(const BandPartition& a, const BandPartition& b) { return a.intervals() == b.intervals(); }

struct RegularizeResult {
  StretchSequence n;
  BandPartition bands;
  std::size_t raised = 0;
};

// Raises maximal generators until neighbouring label->=L spacing drops below 6 s^(L-1).
inline RegularizeResult make_regular(const StretchSequence& n, MergeParams params, std::size_t max_steps = 1000000) {
  RegularizeResult res{n, run_to_fixpoint(n, params, max_steps), 0};
  if (!res.bands.terminal()) throw std::runtime_error("merge budget exhausted before regularization");
  for (std::uint64_t L = 2;; ++L) {
    const auto& p = res.bands;
    auto pos = interior_at_least(p, L);
    if (pos.size() < 2) break;
    const std::uint64_t u = pow_sat(params.s, L - 1);
    std::vector<std::size_t> chosen;
    for (std::size_t t = 0; t + 1 < pos.size(); ++t) {
      std::uint64_t G = pos[t + 1] - pos[t];
      if (G < mul_sat(6, u)) continue;
      std::uint64_t k = (G + 4 * u - 1) / (4 * u) - 1;
      for (std::uint64_t c = 1; c <= k; ++c) {
        std::size_t ideal = pos[t] + static_cast<std::size_t>((c * G + (k + 1) / 2) / (k + 1));
        std::size_t best = 0;
        bool found = false;
        for (std::size_t off = 0; !found && off < G; ++off) {
          for (int sgn : {-1, 1}) {
            if (off == 0 && sgn == 1) continue;
            auto cand = static_cast<std::int64_t>(ideal) + sgn * static_cast<std::int64_t>(off);
            if (cand <= static_cast<std::int64_t>(pos[t]) || cand >= static_cast<std::int64_t>(pos[t + 1])) continue;
            auto cp = static_cast<std::size_t>(cand);
            if (p.censored_pos(cp) || p.band(cp).label != ExtNat(L - 1)) continue;
            if (std::find(chosen.begin(), chosen.end(), cp) != chosen.end()) continue;
            best = cp;
            found = true;
            break;
          }
        }
        if (!found) throw std::runtime_error("window too small to regularize level " + std::to_string(L));
        chosen.push_back(best);
      }
    }
    if (chosen.empty()) continue;
    for (auto cp : chosen) {
      auto g = maximal_generator(p, p.current()[cp]);
      res.n.set(g, ExtNat(res.n.at(g).value() + 1));
    }
    res.raised += chosen.size();
    auto next = run_to_fixpoint(res.n, params, max_steps);
    if (!next.terminal() || !same_bands(next, p))
      throw std::runtime_error("regularization changed the band structure at level " + std::to_string(L));
    res.bands = std::move(next);
  }
  return res;
}

namespace detail {

struct GapItem {
  std::int32_t node;
  ExtNat label;
};

// Splits overlong q segments by raising label-(q-1) bands to q, then recurses one level down.
inline bool fix_segment(std::vector<GapItem>& items, std::size_t from, std::size_t to, std::uint64_t q, std::uint64_t s,
                        std::vector<std::int32_t>& raises, std::string& why) {
  std::size_t len = to - from;
  if (q == 1) {
    if (len == 0) return true;
    why = "nonempty 1 segment";
    return false;
  }
  const std::uint64_t u = pow_sat(s, q - 1);
  if (len + 1 < u) {
    why = "level " + std::to_string(q) + " segment below s^(q-1)";
    return false;
  }
  for (std::size_t k = from; k < to; ++k)
    if (items[k].label >= ExtNat(q)) {
      why = "label >= q inside a q segment";
      return false;
    }
  std::uint64_t G = len + 1;
  if (G >= mul_sat(12, u)) {
    std::uint64_t k = (G + 4 * u - 1) / (4 * u) - 1;
    std::vector<std::size_t> picked;
    for (std::uint64_t c = 1; c <= k; ++c) {
      // offset o in [1, len] is item from + o - 1
      std::uint64_t ideal = (c * G + (k + 1) / 2) / (k + 1);
      bool found = false;
      for (std::uint64_t off = 0; !found && off < G; ++off) {
        for (int sgn : {-1, 1}) {
          if (off == 0 && sgn == 1) continue;
          auto o = static_cast<std::int64_t>(ideal) + sgn * static_cast<std::int64_t>(off);
          if (o < 1 || o > static_cast<std::int64_t>(len)) continue;
          std::size_t idx = from + static_cast<std::size_t>(o) - 1;
          if (items[idx].label != ExtNat(q - 1)) continue;
          items[idx].label = ExtNat(q);
          raises.push_back(items[idx].node);
          picked.push_back(idx);
          found = true;
          break;
        }
      }
      if (!found) {
        why = "no label " + std::to_string(q - 1) + " band to raise";
        return false;
      }
    }
    std::sort(picked.begin(), picked.end());
    std::size_t start = from;
    for (auto idx : picked) {
      if (!fix_segment(items, start, idx, q, s, raises, why)) return false;
      start = idx + 1;
    }
    return fix_segment(items, start, to, q, s, raises, why);
  }
  std::size_t start = from;
  for (std::size_t k = from; k < to; ++k) {
    if (items[k].label == ExtNat(q - 1)) {
      if (!fix_segment(items, start, k, q - 1, s, raises, why)) return false;
      start = k + 1;
    }
  }
  return fix_segment(items, start, to, q - 1, s, raises, why);
}

inline bool fix_gap(const BandPartition& p, std::int32_t id, std::vector<std::int32_t>& raises, std::string& why) {
  const auto& b = p.node(id);
  const std::uint64_t s = p.params().s;
  std::vector<GapItem> base;
  ExtNat lmax(0);
  for (auto v : b.inner) {
    base.push_back(GapItem{v, p.node(v).label});
    lmax = std::max(lmax, p.node(v).label);
  }
  if (base.empty()) return true;
  if (lmax.is_inf()) {
    why = "infinite label inside a merge gap";
    return false;
  }
  const std::uint64_t L = lmax.value();
  std::string why_a;
  {
    auto items = base;
    std::vector<std::int32_t> local;
    std::size_t seps = 0, start = 0;
    bool ok = true;
    for (std::size_t k = 0; k <= items.size() && ok; ++k) {
      if (k == items.size() || items[k].label == lmax) {
        ok = fix_segment(items, start, k, L, s, local, why_a);
        start = k + 1;
        seps += k < items.size();
      }
    }
    if (ok && seps + 1 <= 12 * s) {
      raises.insert(raises.end(), local.begin(), local.end());
      return true;
    }
    if (ok) why_a = "more than 12 s segments";
  }
  auto items = base;
  std::vector<std::int32_t> local;
  std::string why_b;
  if (fix_segment(items, 0, items.size(), L + 1, s, local, why_b)) {
    raises.insert(raises.end(), local.begin(), local.end());
    return true;
  }
  why = why_a + "; " + why_b;
  return false;
}

}  // namespace detail

// Raises inner bands of failing merge gaps; final bands and labels must survive unchanged.
inline RegularizeResult make_very_regular(const StretchSequence& n, MergeParams params, std::size_t max_steps = 1000000) {
  RegularizeResult res{n, run_to_fixpoint(n, params, max_steps), 0};
  if (!res.bands.terminal()) throw std::runtime_error("merge budget exhausted");
  const auto ref_bands = res.bands.intervals();
  const auto ref_labels = res.bands.labels();
  for (int round = 0; round < 4; ++round) {
    auto rep = is_very_regular(res.bands);
    if (rep.ok) return res;
    std::vector<std::int32_t> raises;
    const auto& p = res.bands;
    for (std::size_t id = p.leaf_count(); id < p.nodes().size(); ++id) {
      if (rep.local[id].ok) continue;
      std::string why;
      if (!detail::fix_gap(p, static_cast<std::int32_t>(id), raises, why))
        throw std::runtime_error("cannot make band [" + std::to_string(p.nodes()[id].lo) + "," +
                                 std::to_string(p.nodes()[id].hi) + "] very regular: " + why);
    }
    std::sort(raises.begin(), raises.end());
    raises.erase(std::unique(raises.begin(), raises.end()), raises.end());
    for (auto v : raises) {
      auto g = maximal_generator(p, v);
      res.n.set(g, ExtNat(res.n.at(g).value() + 1));
    }
    res.raised += raises.size();
    auto next = run_to_fixpoint(res.n, params, max_steps);
    if (!next.terminal() || next.intervals() != ref_bands || next.labels() != ref_labels)
      throw std::runtime_error("very-regular raise changed the final bands");
    res.bands = std::move(next);
  }
  auto rep = is_very_regular(res.bands);
  if (!rep.ok) throw std::runtime_error("very-regular construction did not converge: " + rep.reason);
  return res;
}

// ---- diagnostics on very regular merges ----

constexpr std::uint64_t flat(std::uint64_t n, std::uint64_t d_inv) { return n * d_inv / (2 * d_inv - 1); }

struct BandDiagnostics {
  std::uint64_t m = 0;
  std::uint64_t r = 0;
  std::uint64_t q = 0;
  std::uint64_t n = 0;
  std::int64_t sigma = 0;
  std::uint64_t flat_n = 0;
  bool sum_applicable = false;  // q <= 8
  bool sum_ok = true;           // m + r = n
  bool sigma_ok = true;
  bool q_ok = true;             // q <= flat(n)
  bool extra_applicable = false;
  bool extra_half_ok = true;    // flat(m) + flat(r) - ceil(q/2) <= flat(n) - 2
  bool extra_max_ok = true;     // max(flat(m), q-1) + flat(r) - q <= flat(n) - 3
  bool core_ok() const { return sum_ok && sigma_ok && q_ok; }
  bool all_ok() const { return core_ok() && extra_half_ok && extra_max_ok; }
};

inline BandDiagnostics q_diagnostics(const BandPartition& p, std::int32_t id) {
  const auto& b = p.node(id);
  if (b.leaf()) throw std::invalid_argument("singleton band has no merge");
  auto local = merge_gap_check(p, id);
  if (!local.ok) throw std::invalid_argument("band is not very regular: " + local.reason);
  const auto &lm = p.node(b.left).label, &lr = p.node(b.right).label;
  if (lm.is_inf() || lr.is_inf() || b.label.is_inf()) throw std::invalid_argument("infinite label in merge");
  const std::uint64_t d = p.params().d_inv;
  BandDiagnostics g;
  g.m = lm.value();
  g.r = lr.value();
  g.n = b.label.value();
  g.q = local.q;
  g.flat_n = flat(g.n, d);
  g.sigma = static_cast<std::int64_t>(g.m + g.r) - static_cast<std::int64_t>(g.q / d) - static_cast<std::int64_t>(g.n);
  g.sum_applicable = g.q <= 8;
  g.sum_ok = !g.sum_applicable || g.m + g.r == g.n;
  g.sigma_ok = g.sigma >= -1 && g.sigma <= 1;
  g.q_ok = g.q <= g.flat_n;
  g.extra_applicable = g.m >= 4 && g.q >= 3;
  if (g.extra_applicable) {
    auto fm = static_cast<std::int64_t>(flat(g.m, d)), fr = static_cast<std::int64_t>(flat(g.r, d));
    auto fn = static_cast<std::int64_t>(g.flat_n), q = static_cast<std::int64_t>(g.q);
    g.extra_half_ok = fm + fr - (q + 1) / 2 <= fn - 2;
    g.extra_max_ok = std::max(fm, q - 1) + fr - q <= fn - 3;
  }
  return g;
}

// Simple iff every merge in the tree has q <= 2; meaningful for s >= 72.
inline bool simple_by_q(const BandPartition& p, std::int32_t id) {
  std::vector<std::int32_t> stack{id};
  while (!stack.empty()) {
    const auto& b = p.node(stack.back());
    auto v = stack.back();
    stack.pop_back();
    if (b.leaf()) continue;
    auto local = merge_gap_check(p, v);
    if (!local.ok) throw std::invalid_argument("q undefined for a band that is not very regular");
    if (local.q > 2) return false;
    stack.push_back(b.left);
    stack.push_back(b.right);
  }
  return true;
}

// ---- counting and statistics ----

struct CompositionCount {
  std::uint64_t exact = 0;         // 2^(S-1)
  std::uint64_t enumerated = 0;
  std::uint64_t at_most_bound = 0; // 2^S - 1
  std::uint64_t at_most_enumerated = 0;
};

namespace detail {
inline void enumerate_compositions(std::uint64_t remaining, std::uint64_t& exact, std::uint64_t& any) {
  // every prefix is itself a composition of a smaller sum
  for (std::uint64_t a = 1; a <= remaining; ++a) {
    ++any;
    if (a == remaining) ++exact;
    else enumerate_compositions(remaining - a, exact, any);
  }
}
}  // namespace detail

inline CompositionCount compositions_count(std::uint64_t S) {
  if (S < 1 || S > 20) throw std::invalid_argument("S must lie in [1,20]");
  CompositionCount c;
  c.exact = std::uint64_t{1} << (S - 1);
  c.at_most_bound = (std::uint64_t{1} << S) - 1;
  detail::enumerate_compositions(S, c.enumerated, c.at_most_enumerated);
  return c;
}

struct LabelDecay {
  std::vector<std::uint64_t> at_least;  // at_least[l] = windows with label(0) >= l, l >= 1
  std::vector<double> frequency;
  std::size_t windows = 0;
  std::size_t exhausted = 0;
  std::size_t censored = 0;
};

inline LabelDecay label_decay_statistics(double q, MergeParams params, std::size_t windows, std::int64_t half_width,
                                         std::uint64_t seed, std::size_t max_steps = 1000000, unsigned jobs = 0) {
  if (windows == 0) throw std::invalid_argument("need at least one window");
  std::vector<ExtNat> label(windows);
  std::vector<std::uint8_t> done(windows), cens(windows);
  parallel_for(windows, jobs, [&](std::size_t w) {
    Stream st(seed, Purpose::audit, {static_cast<std::int64_t>(w)});
    auto n = sample_geometric_stretches(q, centered_window(half_width), st);
    auto p = run_to_fixpoint(n, params, max_steps);
    auto pos = p.position_of(0);
    label[w] = p.band(pos).label;
    done[w] = p.terminal();
    cens[w] = p.censored_pos(pos);
  });
  LabelDecay out;
  out.windows = windows;
  std::uint64_t top = 1;
  for (auto& l : label) top = std::max(top, l.value_or(64));
  out.at_least.assign(top + 2, 0);
  for (std::size_t w = 0; w < windows; ++w) {
    out.exhausted += !done[w];
    out.censored += cens[w];
    for (std::uint64_t l = 1; l <= top + 1; ++l)
      if (label[w] >= ExtNat(l)) ++out.at_least[l];
  }
  out.frequency.assign(out.at_least.size(), 0.0);
  for (std::size_t l = 1; l < out.at_least.size(); ++l)
    out.frequency[l] = static_cast<double>(out.at_least[l]) / static_cast<double>(windows);
  return out;
}

// ---- report formats ----

inline void write_band_report(std::ostream& os, const BandPartition& p) {
  for (const auto& b : enumerate_bands(p))
    os << b.m << '\t' << b.lo << '\t' << b.hi << '\t' << b.label << '\t' << (is_simple(p, b.id) ? "yes" : "no") << '\t'
       << (b.censored ? "yes" : "no") << '\n';
}

inline void write_merge_history(std::ostream& os, const BandPartition& p) {
  for (const auto& r : p.history()) os << r.k << '\t' << r.i << '\t' << r.j << '\t' << r.D << '\t' << r.label << '\n';
}

}  // namespace lorac
