#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bandscheme.hpp"
#include "dynamics.hpp"

namespace lorac {

enum class BoxMode { theorem, exercise };

struct KappaValues {
  std::int64_t kappa_ver = 0;
  std::int64_t kappa_hor = 0;
};

inline std::int64_t ceil12(std::uint64_t s) { return static_cast<std::int64_t>((s + 11) / 12); }

inline KappaValues theorem_kappas(std::uint64_t s_t, std::uint64_t s_x) {
  return {ceil12(s_x) - 2, ceil12(s_t) - 2 * (12 * static_cast<std::int64_t>(s_x) + 1) - 4};
}

// Smallest s_t giving kappa_hor > 0.
inline std::uint64_t min_s_t_for_kappa_hor(std::uint64_t s_x) { return 12 * (24 * s_x + 6) + 1; }

struct BoxParams {
  std::uint64_t s_t = 32;
  std::uint64_t s_x = 32;
  std::int64_t kappa_ver = 0;
  std::int64_t kappa_hor = 0;
  std::int64_t i_offset = 0;  // first row (1-based) of the horizontal input/output rows
  BoxMode mode = BoxMode::exercise;

  static BoxParams theorem(std::uint64_t s_t, std::uint64_t s_x) {
    auto k = theorem_kappas(s_t, s_x);
    BoxParams p{s_t, s_x, k.kappa_ver, k.kappa_hor, 12 * static_cast<std::int64_t>(s_x) + 2, BoxMode::theorem};
    p.validate();
    return p;
  }

  static BoxParams exercise(std::int64_t kappa_ver, std::int64_t kappa_hor, std::int64_t i_offset,
                            std::uint64_t s_t = 32, std::uint64_t s_x = 32) {
    BoxParams p{s_t, s_x, kappa_ver, kappa_hor, i_offset, BoxMode::exercise};
    p.validate();
    return p;
  }

  void validate() const {
    if (kappa_ver <= 0 || kappa_hor <= 0)
      throw std::invalid_argument("kappa values must be positive (kappa_ver=" + std::to_string(kappa_ver) +
                                  ", kappa_hor=" + std::to_string(kappa_hor) + ")");
    if (i_offset < 1) throw std::invalid_argument("i_offset must be >= 1");
    if (mode == BoxMode::theorem) {
      auto k = theorem_kappas(s_t, s_x);
      if (k.kappa_ver != kappa_ver || k.kappa_hor != kappa_hor || i_offset != 12 * static_cast<std::int64_t>(s_x) + 2)
        throw std::invalid_argument("theorem mode fixes kappa and i_offset from s_t, s_x");
      if (kappa_ver < 64) throw std::invalid_argument("theorem mode requires kappa_ver >= 64");
    }
  }

  // I as 1-based row numbers [first, last]
  std::int64_t io_first() const { return i_offset; }
  std::int64_t io_last() const { return i_offset + kappa_hor + 3; }
};

struct BoxRef {
  std::uint64_t n = 1;
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const BoxRef&, const BoxRef&) = default;
};

struct Level {
  std::uint64_t n = 0;
  std::vector<Window> rows;  // temporal (n+1) segments
  std::vector<Window> cols;  // spatial columns (x1, x2] of n segments
  std::vector<std::int64_t> row_parent, col_parent;
  std::vector<std::pair<std::size_t, std::size_t>> row_children, col_children;  // [first, last) at level n-1
};

inline bool on_boundary(const Region& r, const Vertex& v) {
  return v.t == r.t_lo || v.t == r.t_hi || v.x == r.x_lo || v.x == r.x_hi;
}

class BoxHierarchy {
 public:
  BoxHierarchy(const BandPartition& time, const BandPartition& space, BoxParams params, std::uint64_t max_level)
      : params_(params) {
    params_.validate();
    if (max_level < 1) throw std::invalid_argument("max_level must be >= 1");
    if (!time.terminal() || !space.terminal()) throw std::invalid_argument("band partitions must be terminal");
    if (params_.mode == BoxMode::theorem) {
      if (time.params().s != params_.s_t || space.params().s != params_.s_x)
        throw std::invalid_argument("partition scales do not match s_t, s_x");
      if (!is_regular(time).regular()) throw std::invalid_argument("temporal partition is not regular");
      if (!is_regular(space).regular()) throw std::invalid_argument("spatial partition is not regular");
    }
    for (std::uint64_t n = 1; n <= max_level; ++n) {
      Level L;
      L.n = n;
      for (const auto& sg : segments(time, n + 1).segments) {
        Window w{sg.left_end + 1, sg.right_start - 1};
        if (w.empty()) throw std::invalid_argument("empty temporal segment at level " + std::to_string(n));
        L.rows.push_back(w);
      }
      for (const auto& sg : segments(space, n).segments) L.cols.push_back(Window{sg.left_end + 1, sg.right_start});
      if (L.rows.empty() || L.cols.empty())
        throw std::invalid_argument("window too small for level " + std::to_string(n));
      L.row_parent.assign(L.rows.size(), -1);
      L.col_parent.assign(L.cols.size(), -1);
      levels_.push_back(std::move(L));
    }
    for (std::size_t k = 0; k + 1 < levels_.size(); ++k) {
      link(levels_[k].rows, levels_[k + 1].rows, levels_[k].row_parent, levels_[k + 1].row_children);
      link(levels_[k].cols, levels_[k + 1].cols, levels_[k].col_parent, levels_[k + 1].col_children);
    }
    audit();
  }

  const BoxParams& params() const { return params_; }
  std::uint64_t max_level() const { return levels_.size(); }
  const Level& level(std::uint64_t n) const {
    if (n < 1 || n > levels_.size()) throw std::out_of_range("level " + std::to_string(n) + " not built");
    return levels_[n - 1];
  }
  std::size_t box_count(std::uint64_t n) const { return level(n).rows.size() * level(n).cols.size(); }

  Region box(const BoxRef& b) const {
    const auto& L = level(b.n);
    const auto &r = L.rows.at(b.row), &c = L.cols.at(b.col);
    return Region{r.lo, r.hi, c.lo, c.hi};
  }

  std::optional<BoxRef> parent(const BoxRef& b) const {
    const auto& L = level(b.n);
    if (b.n == max_level() || L.row_parent.at(b.row) < 0 || L.col_parent.at(b.col) < 0) return std::nullopt;
    return BoxRef{b.n + 1, static_cast<std::size_t>(L.row_parent[b.row]), static_cast<std::size_t>(L.col_parent[b.col])};
  }

  bool has_children(const BoxRef& b) const { return b.n >= 2 && b.n <= max_level(); }
  std::size_t l_t(const BoxRef& b) const { return span(level(b.n).row_children.at(b.row)); }
  std::size_t l_x(const BoxRef& b) const { return span(level(b.n).col_children.at(b.col)); }

  // 0-based (i, j); i = 0 is the top row.
  BoxRef child(const BoxRef& b, std::size_t i, std::size_t j) const {
    if (!has_children(b)) throw std::invalid_argument("level-1 boxes have no sub-boxes");
    const auto& L = level(b.n);
    auto rr = L.row_children.at(b.row), cc = L.col_children.at(b.col);
    if (i >= rr.second - rr.first || j >= cc.second - cc.first) throw std::out_of_range("sub-box index");
    return BoxRef{b.n - 1, rr.first + i, cc.first + j};
  }

  // strip below `upper`, gap right of `left`
  Region strip_below(const BoxRef& upper) const {
    const auto& L = level(upper.n);
    if (upper.row + 1 >= L.rows.size()) throw std::out_of_range("no box below");
    const auto& c = L.cols.at(upper.col);
    return Region{L.rows[upper.row].hi + 1, L.rows[upper.row + 1].lo - 1, c.lo, c.hi};
  }
  Region gap_right_of(const BoxRef& left) const {
    const auto& L = level(left.n);
    if (left.col + 1 >= L.cols.size()) throw std::out_of_range("no box to the right");
    const auto& r = L.rows.at(left.row);
    return Region{r.lo, r.hi, L.cols[left.col].hi, L.cols[left.col + 1].lo - 1};
  }

  // sub-boxes + strips + gaps
  std::size_t object_count(const BoxRef& b) const {
    std::size_t lt = l_t(b), lx = l_x(b);
    return lt * lx + (lt - 1) * lx + lt * (lx - 1);
  }

  Region extent() const {
    const auto& L = levels_.front();
    return Region{L.rows.front().lo, L.rows.back().hi, L.cols.front().lo, L.cols.back().hi};
  }

  const std::vector<std::string>& audit_failures() const { return audit_failures_; }

 private:
  static std::size_t span(const std::pair<std::size_t, std::size_t>& p) { return p.second - p.first; }

  static void link(const std::vector<Window>& lower, const std::vector<Window>& upper, std::vector<std::int64_t>& parent,
                   std::vector<std::pair<std::size_t, std::size_t>>& children) {
    children.assign(upper.size(), {0, 0});
    std::size_t u = 0;
    for (std::size_t k = 0; k < lower.size(); ++k) {
      while (u < upper.size() && upper[u].hi < lower[k].lo) ++u;
      if (u < upper.size() && upper[u].lo <= lower[k].lo && lower[k].hi <= upper[u].hi) {
        if (children[u].first == children[u].second) children[u] = {k, k};
        children[u].second = k + 1;
        parent[k] = static_cast<std::int64_t>(u);
      }
    }
  }

  void audit() {
    const double cap = 450.0 * static_cast<double>(params_.s_t) * static_cast<double>(params_.s_x);
    for (std::uint64_t n = 2; n <= max_level(); ++n) {
      const auto& L = level(n);
      for (std::size_t r = 0; r < L.rows.size(); ++r)
        for (std::size_t c = 0; c < L.cols.size(); ++c) {
          BoxRef b{n, r, c};
          auto lt = static_cast<std::int64_t>(l_t(b)), lx = static_cast<std::int64_t>(l_x(b));
          std::string where = "level " + std::to_string(n) + " box (" + std::to_string(r) + "," + std::to_string(c) + ")";
          if (static_cast<double>(object_count(b)) > cap) audit_failures_.push_back(where + ": object count above 450 s_t s_x");
          if (params_.mode != BoxMode::theorem) continue;
          if (lt < ceil12(params_.s_t) || lt > 12 * static_cast<std::int64_t>(params_.s_t))
            audit_failures_.push_back(where + ": l_t=" + std::to_string(lt) + " out of range");
          if (lx - 1 < ceil12(params_.s_x) || lx - 1 > 12 * static_cast<std::int64_t>(params_.s_x))
            audit_failures_.push_back(where + ": l_x=" + std::to_string(lx) + " out of range");
        }
    }
  }

  BoxParams params_;
  std::vector<Level> levels_;
  std::vector<std::string> audit_failures_;
};

inline BoxHierarchy build_hierarchy(const BandPartition& time, const BandPartition& space, const BoxParams& params,
                                    std::uint64_t max_level) {
  return BoxHierarchy(time, space, params, max_level);
}

struct IOSets {
  std::vector<Vertex> in_ver, out_ver, in_hor, out_hor;  // sorted
};

// Lazy goodness and input/output sets under one realization.
// Strips and gaps next to a bad box are not counted; the bad box already is.
class GoodnessEvaluator {
 public:
  GoodnessEvaluator(const BoxHierarchy& h, const Configuration& cfg) : h_(h), cfg_(cfg) {
    auto e = h.extent();
    const auto &tw = cfg.time_window(), &xw = cfg.space_window();
    if (!tw.contains(e.t_lo) || !tw.contains(e.t_hi) || !xw.contains(e.x_lo) || !xw.contains(e.x_hi))
      throw std::out_of_range("configuration does not cover the hierarchy");
    for (std::uint64_t n = 1; n <= h.max_level(); ++n) {
      auto cnt = h.box_count(n);
      box_.emplace_back(cnt, -1);
      strip_.emplace_back(cnt, -1);
      gap_.emplace_back(cnt, -1);
      io_.emplace_back(cnt);
    }
  }

  const BoxHierarchy& hierarchy() const { return h_; }
  const Configuration& configuration() const { return cfg_; }

  bool box_good(const BoxRef& b) {
    auto& slot = box_[b.n - 1][key(b)];
    if (slot < 0) slot = compute_box(b) ? 1 : 0;
    return slot == 1;
  }

  // Out_ver(upper) ~> In_ver(box below), inside the strip rows and the column.
  bool strip_good(const BoxRef& upper) {
    auto& slot = strip_[upper.n - 1][key(upper)];
    if (slot < 0) {
      BoxRef lower{upper.n, upper.row + 1, upper.col};
      auto s = h_.strip_below(upper);
      Region r{s.t_lo - 1, s.t_hi + 1, s.x_lo, s.x_hi};
      slot = reachable(cfg_, io(upper).out_ver, io(lower).in_ver, r) ? 1 : 0;
    }
    return slot == 1;
  }

  // Out_hor ~> In_hor in both directions, inside the shared rows.
  bool gap_good(const BoxRef& left) {
    auto& slot = gap_[left.n - 1][key(left)];
    if (slot < 0) {
      BoxRef right{left.n, left.row, left.col + 1};
      auto a = h_.box(left), b = h_.box(right);
      Region r{a.t_lo, a.t_hi, a.x_lo, b.x_hi};
      slot = reachable(cfg_, io(left).out_hor, io(right).in_hor, r) &&
                     reachable(cfg_, io(right).out_hor, io(left).in_hor, r)
                 ? 1
                 : 0;
    }
    return slot == 1;
  }

  bool valid(const BoxRef& upper, const BoxRef& lower) {
    if (lower.n != upper.n || lower.col != upper.col || lower.row != upper.row + 1)
      throw std::invalid_argument("valid() needs vertically adjacent boxes");
    return box_good(upper) && box_good(lower) && strip_good(upper);
  }

  // Bad sub-objects of an n+1 box, stopping once `limit` is exceeded.
  std::size_t bad_objects(const BoxRef& b, std::size_t limit = std::numeric_limits<std::size_t>::max()) {
    std::size_t lt = h_.l_t(b), lx = h_.l_x(b), bad = 0;
    for (std::size_t i = 0; i < lt && bad <= limit; ++i)
      for (std::size_t j = 0; j < lx && bad <= limit; ++j) bad += !box_good(h_.child(b, i, j));
    for (std::size_t i = 0; i < lt && bad <= limit; ++i)
      for (std::size_t j = 0; j < lx && bad <= limit; ++j) {
        auto c = h_.child(b, i, j);
        if (!box_good(c)) continue;
        if (i + 1 < lt && box_good(h_.child(b, i + 1, j)) && !strip_good(c)) ++bad;
        if (j + 1 < lx && box_good(h_.child(b, i, j + 1)) && !gap_good(c)) ++bad;
      }
    return bad;
  }

  const IOSets& io(const BoxRef& b) {
    auto& slot = io_[b.n - 1][key(b)];
    if (!slot) slot = compute_io(b);
    return *slot;
  }

 private:
  std::size_t key(const BoxRef& b) const { return b.row * h_.level(b.n).cols.size() + b.col; }

  bool compute_box(const BoxRef& b) {
    auto r = h_.box(b);
    if (b.n == 1) {
      for (std::int64_t t = r.t_lo; t <= r.t_hi; ++t)
        if (!cfg_.vertex_open(t, r.x_lo)) return false;
      return true;
    }
    return bad_objects(b, 1) <= 1;
  }

  IOSets compute_io(const BoxRef& b) {
    IOSets s;
    if (!box_good(b)) return s;
    auto r = h_.box(b);
    if (b.n == 1) {
      s.in_ver = {{r.t_lo, r.x_lo}};
      s.out_ver = {{r.t_hi, r.x_lo}};
      for (std::int64_t t = r.t_lo; t <= r.t_hi; ++t) {
        if (t > r.t_lo) s.in_hor.push_back({t, r.x_lo});
        if (t < r.t_hi) s.out_hor.push_back({t, r.x_lo});
      }
      return s;
    }
    const std::size_t lt = h_.l_t(b), lx = h_.l_x(b);
    auto append = [](std::vector<Vertex>& dst, const std::vector<Vertex>& src) { dst.insert(dst.end(), src.begin(), src.end()); };
    for (std::size_t j = 0; j < lx; ++j) {
      auto top = h_.child(b, 0, j), bottom = h_.child(b, lt - 1, j);
      if (box_good(top)) append(s.in_ver, io(top).in_ver);
      if (box_good(bottom)) append(s.out_ver, io(bottom).out_ver);
    }
    std::vector<std::size_t> sides{0};
    if (lx > 1) sides.push_back(lx - 1);
    const auto& P = h_.params();
    for (auto j : sides)
      for (std::int64_t i1 = P.io_first(); i1 <= P.io_last(); ++i1) {
        auto i = static_cast<std::size_t>(i1 - 1);
        if (i >= lt) break;
        auto c = h_.child(b, i, j);
        if (i + 1 < lt && valid(c, h_.child(b, i + 1, j)))
          for (const auto& v : io(c).in_hor)
            if (on_boundary(r, v)) s.in_hor.push_back(v);
        if (i >= 1 && valid(h_.child(b, i - 1, j), c))
          for (const auto& v : io(c).out_hor)
            if (on_boundary(r, v)) s.out_hor.push_back(v);
      }
    for (auto* v : {&s.in_ver, &s.out_ver, &s.in_hor, &s.out_hor}) {
      std::sort(v->begin(), v->end());
      v->erase(std::unique(v->begin(), v->end()), v->end());
    }
    return s;
  }

  const BoxHierarchy& h_;
  const Configuration& cfg_;
  std::vector<std::vector<std::int8_t>> box_, strip_, gap_;
  std::vector<std::vector<std::optional<IOSets>>> io_;
};

inline bool classify_goodness(GoodnessEvaluator& ev, const BoxRef& b) { return ev.box_good(b); }

// ---- connectivity checks ----

struct InsideConnectivity {
  bool in_ver_out_hor = true;
  bool in_ver_out_ver = true;
  bool in_hor_out_ver = true;
  bool ok() const { return in_ver_out_hor && in_ver_out_ver && in_hor_out_ver; }
};

// The three every-to-every relations inside a good box.
inline InsideConnectivity check_inside_connectivity(GoodnessEvaluator& ev, const BoxRef& b) {
  if (!ev.box_good(b)) throw std::invalid_argument("box is not good");
  const auto& s = ev.io(b);
  auto r = ev.hierarchy().box(b);
  const auto& cfg = ev.configuration();
  return InsideConnectivity{reachable_ffc(cfg, s.in_ver, s.out_hor, r), reachable_ffc(cfg, s.in_ver, s.out_ver, r),
                            reachable_ffc(cfg, s.in_hor, s.out_ver, r)};
}

struct ReachableBoxesCheck {
  std::size_t pairs = 0;
  std::size_t failures = 0;
  std::optional<std::pair<BoxRef, BoxRef>> witness;
  bool ok() const { return failures == 0; }
};

// In_ver(B_ij) every-to-every Out_ver(B_i'j') for good sub-boxes with i' - i >= l_x.
inline ReachableBoxesCheck check_reachable_boxes(GoodnessEvaluator& ev, const BoxRef& b) {
  const auto& h = ev.hierarchy();
  if (!h.has_children(b)) throw std::invalid_argument("level-1 boxes have no sub-boxes");
  if (!ev.box_good(b)) throw std::invalid_argument("box is not good");
  const std::size_t lt = h.l_t(b), lx = h.l_x(b);
  std::vector<Vertex> A, B;
  std::vector<std::pair<std::size_t, std::size_t>> a_owner, b_owner;  // vertex ranges per good sub-box
  std::vector<BoxRef> boxes;
  for (std::size_t i = 0; i < lt; ++i)
    for (std::size_t j = 0; j < lx; ++j) {
      auto c = h.child(b, i, j);
      boxes.push_back(c);
      if (!ev.box_good(c)) {
        a_owner.emplace_back(A.size(), A.size());
        b_owner.emplace_back(B.size(), B.size());
        continue;
      }
      const auto& s = ev.io(c);
      a_owner.emplace_back(A.size(), A.size() + s.in_ver.size());
      A.insert(A.end(), s.in_ver.begin(), s.in_ver.end());
      b_owner.emplace_back(B.size(), B.size() + s.out_ver.size());
      B.insert(B.end(), s.out_ver.begin(), s.out_ver.end());
    }
  auto table = reach_table(ev.configuration(), A, B, h.box(b));
  ReachableBoxesCheck out;
  for (std::size_t u = 0; u < boxes.size(); ++u)
    for (std::size_t v = 0; v < boxes.size(); ++v) {
      if (!ev.box_good(boxes[u]) || !ev.box_good(boxes[v])) continue;
      if (boxes[v].row < boxes[u].row + lx) continue;
      ++out.pairs;
      bool all = true;
      for (auto a = a_owner[u].first; a < a_owner[u].second && all; ++a)
        for (auto w = b_owner[v].first; w < b_owner[v].second && all; ++w) all = table[a][w] != 0;
      if (!all) {
        ++out.failures;
        if (!out.witness) out.witness = std::make_pair(boxes[u], boxes[v]);
      }
    }
  return out;
}

// ---- trees and connectors ----

struct KTree {
  std::uint64_t n = 0;
  std::vector<Vertex> vertices;  // sorted
};

namespace detail {

inline void grow_tree(GoodnessEvaluator& ev, const BoxRef& up, const BoxRef& lo, std::vector<Vertex>& out) {
  const auto& h = ev.hierarchy();
  if (up.n == 1) {
    auto r = h.box(up);
    out.push_back({r.t_hi, r.x_lo});
    return;
  }
  const auto kappa = static_cast<std::size_t>(h.params().kappa_ver);
  const std::size_t last = h.l_t(up) - 1;
  std::size_t taken = 0;
  for (std::size_t j = 0; j < h.l_x(up) && taken < kappa; ++j) {
    auto a = h.child(up, last, j), b = h.child(lo, 0, j);
    if (ev.box_good(a) && ev.box_good(b)) {
      grow_tree(ev, a, b, out);
      ++taken;
    }
  }
  if (taken < kappa) throw std::runtime_error("fewer than kappa_ver good column pairs at level " + std::to_string(up.n));
}

}  // namespace detail

inline KTree extract_tree(GoodnessEvaluator& ev, const BoxRef& upper, const BoxRef& lower) {
  if (lower.n != upper.n || lower.col != upper.col || lower.row != upper.row + 1)
    throw std::invalid_argument("extract_tree needs vertically adjacent boxes");
  if (!ev.box_good(upper) || !ev.box_good(lower)) throw std::invalid_argument("extract_tree needs two good boxes");
  KTree t{upper.n, {}};
  detail::grow_tree(ev, upper, lower, t.vertices);
  std::sort(t.vertices.begin(), t.vertices.end());
  return t;
}

struct TreeCheck {
  bool in_out_ver = true;     // T inside Out_ver(upper)
  bool columns = true;        // pi_x(T) inside pi_x(In_ver(lower))
  bool cardinality = true;    // kappa_ver^(n-1)
  bool one_row = true;        // one time coordinate, inside the column of the boxes
  bool ok() const { return in_out_ver && columns && cardinality && one_row; }
};

inline TreeCheck check_tree(GoodnessEvaluator& ev, const BoxRef& upper, const BoxRef& lower, const KTree& t) {
  TreeCheck c;
  const auto& out = ev.io(upper).out_ver;
  std::vector<std::int64_t> xs;
  for (const auto& v : ev.io(lower).in_ver) xs.push_back(v.x);
  std::sort(xs.begin(), xs.end());
  auto r = ev.hierarchy().box(upper);
  for (const auto& v : t.vertices) {
    c.in_out_ver = c.in_out_ver && std::binary_search(out.begin(), out.end(), v);
    c.columns = c.columns && std::binary_search(xs.begin(), xs.end(), v.x);
    c.one_row = c.one_row && v.t == t.vertices.front().t && v.x >= r.x_lo && v.x <= r.x_hi;
  }
  double expect = std::pow(static_cast<double>(ev.hierarchy().params().kappa_ver), static_cast<double>(t.n - 1));
  c.cardinality = static_cast<double>(t.vertices.size()) == expect;
  return c;
}

// Candidate edges from Out_hor(left) on its right border to In_hor(right) on its left border.
inline std::size_t horizontal_connectors(GoodnessEvaluator& ev, const BoxRef& left, const BoxRef& right) {
  if (right.n != left.n || right.row != left.row || right.col != left.col + 1)
    throw std::invalid_argument("boxes are not horizontally neighbouring");
  if (!ev.box_good(left) || !ev.box_good(right)) throw std::invalid_argument("horizontal_connectors needs two good boxes");
  auto a = ev.hierarchy().box(left), b = ev.hierarchy().box(right);
  const auto& in = ev.io(right).in_hor;
  std::size_t count = 0;
  for (const auto& v : ev.io(left).out_hor)
    if (v.x == a.x_hi && std::binary_search(in.begin(), in.end(), Vertex{v.t + 1, b.x_lo})) ++count;
  return count;
}

// ---- probability estimates ----

inline double strip_cross_failure_bound(std::uint64_t n, double alpha, std::uint64_t s_x, std::int64_t kappa_hor) {
  if (kappa_hor <= 0) throw std::invalid_argument("kappa_hor must be positive");
  double base = std::pow(1.0 + static_cast<double>(s_x), -alpha) * static_cast<double>(kappa_hor);
  return std::exp(-std::pow(base, static_cast<double>(n)));
}

inline double strip_cross_failure_bound(std::uint64_t n, double alpha, const BoxParams& p) {
  return strip_cross_failure_bound(n, alpha, p.s_x, p.kappa_hor);
}

struct RecursionCheck {
  bool preconditions = false;
  std::string reason;
  double bad_next = 0.0;   // upper bound on 1 - P_{n+1}
  double p_next = 0.0;     // lower bound on P_{n+1}
  double pow15 = 0.0;      // (1 - P_n)^1.5
  double pp_15 = 0.0;      // pp^((n+1) 1.5)
  double pp_n2 = 0.0;      // pp^(n+2)
  bool chain = false;
  bool ok() const { return preconditions && chain; }
};

namespace detail {

// P(Binomial(C, x) >= 2)
inline double binomial_tail2(std::uint64_t C, double x) {
  if (C < 2 || x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lx = std::log(x), l1 = std::log1p(-x), lc = std::lgamma(static_cast<double>(C) + 1.0);
  double sum = 0.0;
  for (std::uint64_t i = 2; i <= C; ++i) {
    double li = lc - std::lgamma(static_cast<double>(i) + 1.0) - std::lgamma(static_cast<double>(C - i) + 1.0) +
                static_cast<double>(i) * lx + static_cast<double>(C - i) * l1;
    double term = std::exp(li);
    sum += term;
    if (term < sum * 1e-18 && static_cast<double>(i) > static_cast<double>(C) * x) break;
  }
  return std::min(sum, 1.0);
}

inline bool leq(double a, double b) { return a <= b * (1.0 + 1e-12); }

}  // namespace detail

// One step of the good-object recursion with at most C objects at level n, given x = 1 - P_n.
inline RecursionCheck multiscale_recursion_check_bad(std::uint64_t C, double pp, double x, std::uint64_t n) {
  RecursionCheck r;
  if (C < 1) throw std::invalid_argument("C must be >= 1");
  if (!(pp > 0.0 && pp < 1.0)) throw std::invalid_argument("pp must lie in (0,1)");
  if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("P_n must lie in [0,1]");
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  const double ppn1 = std::pow(pp, static_cast<double>(n + 1));
  r.bad_next = detail::binomial_tail2(C, x);
  r.p_next = 1.0 - r.bad_next;
  r.pow15 = std::pow(x, 1.5);
  r.pp_15 = std::pow(pp, 1.5 * static_cast<double>(n + 1));
  r.pp_n2 = std::pow(pp, static_cast<double>(n + 2));
  if (!detail::leq(ppn1, std::pow(static_cast<double>(C), -6.0))) {
    r.reason = "precondition pp^(n+1) <= C^-6 violated";
    return r;
  }
  if (!detail::leq(x, ppn1)) {
    r.reason = "precondition 1 - P_n <= pp^(n+1) violated";
    return r;
  }
  r.preconditions = true;
  r.chain = detail::leq(r.bad_next, r.pow15) && detail::leq(r.pow15, r.pp_15) && detail::leq(r.pp_15, r.pp_n2);
  if (!r.chain) r.reason = "chain of inequalities broken";
  return r;
}

inline RecursionCheck multiscale_recursion_check(std::uint64_t C, double pp, double P_n, std::uint64_t n) {
  if (!(P_n >= 0.0 && P_n <= 1.0)) throw std::invalid_argument("P_n must lie in [0,1]");
  return multiscale_recursion_check_bad(C, pp, 1.0 - P_n, n);
}

struct UnionBound {
  double lhs = 0.0;  // 1 - prod(1 - p_i)
  double rhs = 0.0;  // min(1 - e^-c, (a/c)(1 - e^-c))
  bool holds() const { return lhs >= rhs * (1.0 - 1e-12); }
};

inline UnionBound union_lower_bound(const std::vector<double>& ps, double c) {
  if (!(c > 0.0)) throw std::invalid_argument("c must be positive");
  double log_keep = 0.0, a = 0.0;
  for (double p : ps) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("p_i must lie in (0,1)");
    log_keep += std::log1p(-p);
    a += p;
  }
  double e = -std::expm1(-c);
  return UnionBound{-std::expm1(log_keep), std::min(e, a / c * e)};
}

// ---- strip decomposition ----

struct StripDecomposition {
  BandDiagnostics diag;
  bool base_case = false;  // q <= 2
  Region top, bottom;
  std::vector<Region> middle_rows;  // q segments, rows of q-1 boxes
  std::vector<Region> separators;   // label-q bands, the (q, q-1) strips
  std::int64_t height() const {
    std::int64_t h = (top.t_hi - top.t_lo + 1) + (bottom.t_hi - bottom.t_lo + 1);
    for (const auto& r : middle_rows) h += r.t_hi - r.t_lo + 1;
    for (const auto& r : separators) h += r.t_hi - r.t_lo + 1;
    return h;
  }
};

// Splits the temporal band `id` over columns [x_lo, x_hi] along its merge.
inline StripDecomposition decompose_strip(const BandPartition& time, std::int32_t id, std::int64_t x_lo, std::int64_t x_hi) {
  const auto& b = time.node(id);
  if (b.leaf()) throw std::invalid_argument("band has no merge");
  StripDecomposition d;
  d.diag = q_diagnostics(time, id);
  d.base_case = d.diag.q <= 2;
  const auto &L = time.node(b.left), &R = time.node(b.right);
  d.top = Region{L.lo, L.hi, x_lo, x_hi};
  d.bottom = Region{R.lo, R.hi, x_lo, x_hi};
  ExtNat lmax(0);
  for (auto v : b.inner) lmax = std::max(lmax, time.node(v).label);
  const bool split = !d.base_case && !b.inner.empty() && lmax == ExtNat(d.diag.q);
  std::optional<std::int64_t> run_lo;
  std::int64_t run_hi = 0;
  auto close = [&] {
    if (run_lo) d.middle_rows.push_back(Region{*run_lo, run_hi, x_lo, x_hi});
    run_lo.reset();
  };
  for (auto v : b.inner) {
    const auto& nb = time.node(v);
    if (split && nb.label == lmax) {
      close();
      d.separators.push_back(Region{nb.lo, nb.hi, x_lo, x_hi});
    } else {
      if (!run_lo) run_lo = nb.lo;
      run_hi = nb.hi;
    }
  }
  close();
  return d;
}

// ---- dump ----

inline void write_hierarchy(std::ostream& os, const BoxHierarchy& h, GoodnessEvaluator* ev = nullptr) {
  auto flag = [&](auto&& f) -> const char* {
    if (!ev) return "-";
    return f() ? "yes" : "no";
  };
  auto line = [&](std::uint64_t n, const char* kind, const Region& r, const char* good) {
    os << n << '\t' << kind << '\t' << r.t_lo << '\t' << r.t_hi << '\t' << r.x_lo << '\t' << r.x_hi << '\t' << good << '\n';
  };
  for (std::uint64_t n = 1; n <= h.max_level(); ++n) {
    const auto& L = h.level(n);
    for (std::size_t r = 0; r < L.rows.size(); ++r)
      for (std::size_t c = 0; c < L.cols.size(); ++c) {
        BoxRef b{n, r, c};
        line(n, "box", h.box(b), flag([&] { return ev->box_good(b); }));
        auto par = h.parent(b);
        if (r + 1 < L.rows.size() && par && h.parent(BoxRef{n, r + 1, c}) == par)
          line(n, "strip", h.strip_below(b), flag([&] { return ev->strip_good(b); }));
        if (c + 1 < L.cols.size() && par && h.parent(BoxRef{n, r, c + 1}) == par)
          line(n, "gap", h.gap_right_of(b), flag([&] { return ev->gap_good(b); }));
      }
  }
}

// ---- exercise-scale layouts ----

struct ExerciseLayout {
  std::uint64_t levels = 3;
  std::uint64_t leaf_height = 16;  // rows of a level-1 box
  std::uint64_t rows = 20;         // l_t
  std::uint64_t cols = 5;          // l_x
};

struct ExerciseEnvironment {
  StretchSequence nt, nx;
  BandPartition time, space;
};

// Nested stretches with one top-level box: singleton separators carry the labels.
inline ExerciseEnvironment exercise_environment(const ExerciseLayout& lay, MergeParams mp = {}) {
  if (lay.levels < 1 || lay.leaf_height < 1 || lay.rows < 1 || lay.cols < 1)
    throw std::invalid_argument("exercise layout values must be positive");
  std::vector<ExtNat> t{ExtNat(1), ExtNat(lay.levels + 1)};
  auto row = [&](auto&& self, std::uint64_t n) -> void {
    if (n == 1) {
      for (std::uint64_t k = 0; k < lay.leaf_height; ++k) t.emplace_back(1);
      return;
    }
    for (std::uint64_t i = 0; i < lay.rows; ++i) {
      if (i) t.emplace_back(n);
      self(self, n - 1);
    }
  };
  row(row, lay.levels);
  t.emplace_back(lay.levels + 1);
  t.emplace_back(1);
  std::vector<ExtNat> x{ExtNat(1), ExtNat(lay.levels)};
  auto col = [&](auto&& self, std::uint64_t n, std::uint64_t closing) -> void {
    if (n == 1) {
      x.emplace_back(closing);
      return;
    }
    for (std::uint64_t j = 0; j < lay.cols; ++j) self(self, n - 1, j + 1 == lay.cols ? closing : n - 1);
  };
  col(col, lay.levels, lay.levels);
  x.emplace_back(1);
  ExerciseEnvironment e;
  Window tw{0, static_cast<std::int64_t>(t.size()) - 1}, xw{0, static_cast<std::int64_t>(x.size()) - 1};
  e.nt = StretchSequence(tw, std::move(t));
  e.nx = StretchSequence(xw, std::move(x));
  e.time = BandPartition::fixture(e.nt, mp);
  e.space = BandPartition::fixture(e.nx, mp);
  return e;
}

}  // namespace lorac
