#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <shared_mutex>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "environment.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace lorac {

struct Vertex {
  std::int64_t t = 0;
  std::int64_t x = 0;
  friend bool operator==(const Vertex&, const Vertex&) = default;
  friend auto operator<=>(const Vertex&, const Vertex&) = default;
};

// Inclusive space-time rectangle.
struct Region {
  std::int64_t t_lo = 0;
  std::int64_t t_hi = 0;
  std::int64_t x_lo = 0;
  std::int64_t x_hi = 0;
  bool contains(const Vertex& v) const { return v.t >= t_lo && v.t <= t_hi && v.x >= x_lo && v.x <= x_hi; }
};

// One realization: vertex uniforms and edge sets are pure functions of (key, coordinates).
class Configuration {
 public:
  Configuration(EnvironmentParams params, StretchSequence nt, StretchSequence nx, std::uint64_t key)
      : params_(params), nt_(std::move(nt)), nx_(std::move(nx)), metric_(nx_), key_(key),
        cache_(std::make_shared<Cache>()) {
    params_.validate();
    for (const auto& n : nt_.values())
      row_prob_.push_back(n.is_inf() ? 0.0 : std::pow(params_.p, static_cast<double>(n.value())));
  }

  const EnvironmentParams& params() const { return params_; }
  const StretchSequence& nt() const { return nt_; }
  const StretchSequence& nx() const { return nx_; }
  std::uint64_t key() const { return key_; }
  const Window& time_window() const { return nt_.window(); }
  const Window& space_window() const { return nx_.window(); }
  Region full_region() const { return Region{time_window().lo, time_window().hi, space_window().lo, space_window().hi}; }

  double vertex_open_prob(std::int64_t t, std::int64_t /*x*/) const {
    if (!time_window().contains(t)) throw std::out_of_range("time " + std::to_string(t) + " outside window");
    return row_prob_[static_cast<std::size_t>(t - time_window().lo)];
  }

  double edge_open_prob(std::int64_t /*t*/, std::int64_t x, std::int64_t y) const {
    if (x == y) return 1.0;
    return std::pow(1.0 + static_cast<double>(metric_(x, y)), -params_.alpha);
  }

  double vertex_uniform(std::int64_t t, std::int64_t x) const {
    return to_unit_open(mix64(derive_key(key_, Purpose::vertex, {t, x})));
  }

  bool vertex_open(std::int64_t t, std::int64_t x) const {
    if (!closed_.empty() && std::binary_search(closed_.begin(), closed_.end(), Vertex{t, x})) return false;
    return vertex_uniform(t, x) < vertex_open_prob(t, x);
  }

  // Overrides the realization at one vertex; used to stage scenarios.
  void force_closed(std::int64_t t, std::int64_t x) {
    Vertex v{t, x};
    auto it = std::lower_bound(closed_.begin(), closed_.end(), v);
    if (it == closed_.end() || !(*it == v)) closed_.insert(it, v);
  }

  // Open edges (t,x) -> (t+1,y), ascending y, window-truncated; the self edge is always present.
  std::vector<std::int64_t> sample_targets(std::int64_t t, std::int64_t x) const {
    if (!space_window().contains(x)) throw std::out_of_range("source outside spatial window");
    Stream st(key_, Purpose::edge, {t, x});
    std::vector<std::int64_t> left, out;
    skip_side(st, x, +1, out);
    skip_side(st, x, -1, left);
    std::reverse(left.begin(), left.end());
    left.push_back(x);
    left.insert(left.end(), out.begin(), out.end());
    return left;
  }

  // Per-target Bernoulli sampler with the same law; correctness oracle.
  std::vector<std::int64_t> sample_targets_naive(std::int64_t t, std::int64_t x, Stream& st) const {
    (void)t;
    std::vector<std::int64_t> out;
    for (std::int64_t y = space_window().lo; y <= space_window().hi; ++y)
      if (y == x || st.uniform() < edge_open_prob(t, x, y)) out.push_back(y);
    return out;
  }

  // Cached variant of sample_targets for repeated queries.
  const std::vector<std::int64_t>& edge_targets(std::int64_t t, std::int64_t x) const {
    std::uint64_t k = derive_key(0, Purpose::edge, {t, x});
    {
      std::shared_lock lock(cache_->mutex);
      auto it = cache_->edges.find(k);
      if (it != cache_->edges.end()) return it->second;
    }
    auto v = sample_targets(t, x);
    std::unique_lock lock(cache_->mutex);
    return cache_->edges.try_emplace(k, std::move(v)).first->second;
  }

  bool edge_open(std::int64_t t, std::int64_t x, std::int64_t y) const {
    const auto& v = edge_targets(t, x);
    return std::binary_search(v.begin(), v.end(), y);
  }

 private:
  struct Cache {
    std::shared_mutex mutex;
    std::unordered_map<std::uint64_t, std::vector<std::int64_t>> edges;
  };

  // Thinning with a restarting bound: probabilities are nonincreasing in |y - x|.
  void skip_side(Stream& st, std::int64_t x, int dir, std::vector<std::int64_t>& out) const {
    const auto& w = space_window();
    std::int64_t c = x + dir;
    while (w.contains(c)) {
      double b = edge_open_prob(0, x, c);
      std::uint64_t k = st.geometric_skip(b);
      std::int64_t room = dir > 0 ? w.hi - c : c - w.lo;
      if (k > static_cast<std::uint64_t>(room)) return;
      c += dir * static_cast<std::int64_t>(k);
      double pc = edge_open_prob(0, x, c);
      if (st.uniform() * b < pc) out.push_back(c);
      c += dir;
    }
  }

  EnvironmentParams params_;
  StretchSequence nt_;
  StretchSequence nx_;
  SpatialMetric metric_;
  std::uint64_t key_;
  std::shared_ptr<Cache> cache_;
  std::vector<Vertex> closed_;
  std::vector<double> row_prob_;
};

struct InfectionState {
  std::int64_t t = 0;
  std::vector<std::int64_t> infected;  // ascending
};

inline InfectionState step(const InfectionState& s, const Configuration& cfg) {
  if (!cfg.time_window().contains(s.t + 1)) throw std::out_of_range("time window exhausted");
  InfectionState next{s.t + 1, {}};
  for (auto x : s.infected) {
    auto ys = cfg.sample_targets(s.t, x);
    next.infected.insert(next.infected.end(), ys.begin(), ys.end());
  }
  std::sort(next.infected.begin(), next.infected.end());
  next.infected.erase(std::unique(next.infected.begin(), next.infected.end()), next.infected.end());
  std::erase_if(next.infected, [&](std::int64_t y) { return !cfg.vertex_open(next.t, y); });
  return next;
}

struct TrialRecord {
  EnvironmentParams params;
  std::uint64_t trial = 0;
  std::uint64_t seed = 0;  // derived trial key
  bool survived = false;
  std::optional<std::int64_t> extinction_t;
  std::uint64_t max_pop = 0;
  std::uint64_t max_extent = 0;  // max - min + 1 over infected indices
};

struct SimResult {
  TrialRecord record;
  std::vector<std::vector<std::int64_t>> raster;  // infected set per time step, when requested
};

// A closed origin counts as extinction at t = 1 with an empty first row.
inline SimResult simulate(const Configuration& cfg, std::int64_t origin, std::int64_t t_max, bool keep_raster = false) {
  if (!cfg.time_window().contains(0) || !cfg.time_window().contains(t_max))
    throw std::out_of_range("t_max outside time window");
  SimResult res;
  res.record.params = cfg.params();
  res.record.seed = cfg.key();
  InfectionState s{0, {}};
  if (cfg.vertex_open(0, origin)) s.infected.push_back(origin);
  auto observe = [&](const InfectionState& st) {
    res.record.max_pop = std::max<std::uint64_t>(res.record.max_pop, st.infected.size());
    if (!st.infected.empty())
      res.record.max_extent = std::max<std::uint64_t>(
          res.record.max_extent, static_cast<std::uint64_t>(st.infected.back() - st.infected.front() + 1));
    if (keep_raster) res.raster.push_back(st.infected);
  };
  observe(s);
  if (s.infected.empty()) {
    res.record.extinction_t = 1;
    return res;
  }
  while (s.t < t_max) {
    s = step(s, cfg);
    observe(s);
    if (s.infected.empty()) {
      res.record.extinction_t = s.t;
      return res;
    }
  }
  res.record.survived = true;
  return res;
}

inline std::uint64_t trial_key(std::uint64_t master_seed, std::uint64_t trial) {
  return derive_key(master_seed, Purpose::trial, {static_cast<std::int64_t>(trial)});
}

// Each trial draws its own environment; the key does not depend on p.
inline Configuration make_trial_configuration(const EnvironmentParams& params, std::uint64_t master_seed,
                                              std::uint64_t trial, std::int64_t half_width, std::int64_t t_max) {
  params.validate();
  auto key = trial_key(master_seed, trial);
  Stream st_t(key, Purpose::env_time), st_x(key, Purpose::env_space);
  auto nt = sample_geometric_stretches(params.q_t, Window{0, t_max}, st_t);
  auto nx = sample_geometric_stretches(params.q_x, centered_window(half_width), st_x);
  return Configuration(params, std::move(nt), std::move(nx), key);
}

inline TrialRecord run_trial(const EnvironmentParams& params, std::uint64_t master_seed, std::uint64_t trial,
                             std::int64_t half_width, std::int64_t t_max) {
  auto cfg = make_trial_configuration(params, master_seed, trial, half_width, t_max);
  auto rec = simulate(cfg, 0, t_max).record;
  rec.trial = trial;
  return rec;
}

struct WilsonInterval {
  double lo = 0.0;
  double hi = 1.0;
};

inline WilsonInterval wilson_interval(std::uint64_t successes, std::uint64_t n, double z = 1.959963984540054) {
  if (n == 0) return {};
  double nn = static_cast<double>(n), ph = static_cast<double>(successes) / nn, z2 = z * z;
  double denom = 1.0 + z2 / nn;
  double center = (ph + z2 / (2.0 * nn)) / denom;
  double half = z * std::sqrt(ph * (1.0 - ph) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

struct SurvivalEstimate {
  std::uint64_t trials = 0;
  std::uint64_t survived = 0;
  double frequency = 0.0;
  WilsonInterval ci;
  std::vector<TrialRecord> records;
};

inline SurvivalEstimate summarize(std::vector<TrialRecord> records) {
  SurvivalEstimate e;
  e.trials = records.size();
  for (const auto& r : records) e.survived += r.survived;
  e.frequency = e.trials ? static_cast<double>(e.survived) / static_cast<double>(e.trials) : 0.0;
  e.ci = wilson_interval(e.survived, e.trials);
  e.records = std::move(records);
  return e;
}

inline SurvivalEstimate survival_probability(const EnvironmentParams& params, std::int64_t t_max, std::uint64_t trials,
                                             std::uint64_t master_seed, std::int64_t half_width, unsigned jobs = 0) {
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  std::vector<TrialRecord> recs(trials);
  parallel_for(trials, jobs, [&](std::size_t k) { recs[k] = run_trial(params, master_seed, k, half_width, t_max); });
  return summarize(std::move(recs));
}

// Partial sum plus Euler-Maclaurin tail.
inline double zeta(double alpha) {
  if (!(alpha > 1.0)) throw std::invalid_argument("zeta requires alpha > 1");
  const int K = 1000;
  double s = 0.0;
  for (int k = K - 1; k >= 1; --k) s += std::pow(static_cast<double>(k), -alpha);
  double k = K;
  s += std::pow(k, 1.0 - alpha) / (alpha - 1.0) + 0.5 * std::pow(k, -alpha) + alpha * std::pow(k, -alpha - 1.0) / 12.0 -
       alpha * (alpha + 1.0) * (alpha + 2.0) * std::pow(k, -alpha - 3.0) / 720.0;
  return s;
}

inline double mean_offspring_bound(double alpha, double p) { return (2.0 * zeta(alpha) - 1.0) * p; }
inline double extinction_threshold(double alpha) { return 1.0 / (zeta(alpha) + 1.0); }

// ---- reachability ----

namespace detail {

inline void check_region(const Configuration& cfg, const Region& r) {
  if (r.t_lo > r.t_hi || r.x_lo > r.x_hi) throw std::invalid_argument("empty region");
  if (!cfg.time_window().contains(r.t_lo) || !cfg.time_window().contains(r.t_hi) ||
      !cfg.space_window().contains(r.x_lo) || !cfg.space_window().contains(r.x_hi))
    throw std::out_of_range("region not fully realized");
}

// Layered sweep; bit b of a mask marks vertices reached from sources[b].
// Stops as soon as visit(t, masks) returns false.
template <class Visit>
void sweep(const Configuration& cfg, const Region& r, const std::vector<Vertex>& sources, std::int64_t t_end,
           Visit&& visit) {
  const auto width = static_cast<std::size_t>(r.x_hi - r.x_lo + 1);
  std::vector<std::uint64_t> cur(width, 0), next(width, 0);
  std::int64_t t0 = sources.front().t;
  for (const auto& v : sources) t0 = std::min(t0, v.t);
  for (std::int64_t t = t0; t <= t_end; ++t) {
    for (std::size_t b = 0; b < sources.size(); ++b)
      if (sources[b].t == t && cfg.vertex_open(t, sources[b].x))
        cur[static_cast<std::size_t>(sources[b].x - r.x_lo)] |= std::uint64_t{1} << b;
    if (!visit(t, cur) || t == t_end) return;
    std::fill(next.begin(), next.end(), 0);
    for (std::size_t xi = 0; xi < width; ++xi) {
      if (!cur[xi]) continue;
      for (auto y : cfg.edge_targets(t, r.x_lo + static_cast<std::int64_t>(xi))) {
        if (y < r.x_lo || y > r.x_hi) continue;
        next[static_cast<std::size_t>(y - r.x_lo)] |= cur[xi];
      }
    }
    for (std::size_t yi = 0; yi < width; ++yi)
      if (next[yi] && !cfg.vertex_open(t + 1, r.x_lo + static_cast<std::int64_t>(yi))) next[yi] = 0;
    std::swap(cur, next);
  }
}

inline void check_inside(const Region& r, const std::vector<Vertex>& vs) {
  for (const auto& v : vs)
    if (!r.contains(v)) throw std::invalid_argument("vertex outside region");
}

}  // namespace detail

// A ~> B inside the region: some open path from a vertex of A to a vertex of B.
inline bool reachable(const Configuration& cfg, const std::vector<Vertex>& A, const std::vector<Vertex>& B,
                      const Region& r) {
  detail::check_region(cfg, r);
  detail::check_inside(r, A);
  detail::check_inside(r, B);
  if (A.empty() || B.empty()) return false;
  std::int64_t t_end = B.front().t;
  for (const auto& w : B) t_end = std::max(t_end, w.t);
  std::vector<Vertex> src(A.begin(), A.end());
  // collapse all sources onto bit 0
  std::int64_t t0 = src.front().t;
  for (const auto& v : src) t0 = std::min(t0, v.t);
  if (t0 > t_end) return false;
  bool found = false;
  const auto width = static_cast<std::size_t>(r.x_hi - r.x_lo + 1);
  std::vector<std::uint8_t> cur(width, 0), next(width, 0);
  for (std::int64_t t = t0; t <= t_end && !found; ++t) {
    for (const auto& v : src)
      if (v.t == t && cfg.vertex_open(t, v.x)) cur[static_cast<std::size_t>(v.x - r.x_lo)] = 1;
    for (const auto& w : B)
      if (w.t == t && cur[static_cast<std::size_t>(w.x - r.x_lo)]) found = true;
    if (found || t == t_end) break;
    std::fill(next.begin(), next.end(), 0);
    for (std::size_t xi = 0; xi < width; ++xi) {
      if (!cur[xi]) continue;
      for (auto y : cfg.edge_targets(t, r.x_lo + static_cast<std::int64_t>(xi))) {
        if (y < r.x_lo || y > r.x_hi) continue;
        auto yi = static_cast<std::size_t>(y - r.x_lo);
        if (!next[yi] && cfg.vertex_open(t + 1, y)) next[yi] = 1;
      }
    }
    std::swap(cur, next);
  }
  return found;
}

// A ~>_ffc B: every vertex of A reaches every vertex of B inside the region.
inline bool reachable_ffc(const Configuration& cfg, const std::vector<Vertex>& A, const std::vector<Vertex>& B,
                          const Region& r) {
  detail::check_region(cfg, r);
  detail::check_inside(r, A);
  detail::check_inside(r, B);
  if (A.empty() || B.empty()) return true;
  std::int64_t t_end = B.front().t;
  for (const auto& w : B) t_end = std::max(t_end, w.t);
  for (std::size_t start = 0; start < A.size(); start += 64) {
    std::vector<Vertex> chunk(A.begin() + static_cast<std::ptrdiff_t>(start),
                              A.begin() + static_cast<std::ptrdiff_t>(std::min(A.size(), start + 64)));
    const std::uint64_t all = chunk.size() == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << chunk.size()) - 1;
    std::int64_t t0 = chunk.front().t;
    for (const auto& v : chunk) t0 = std::min(t0, v.t);
    for (const auto& v : chunk)
      if (v.t > t_end) return false;
    for (const auto& w : B)
      if (w.t < t0) return false;
    bool ok = true;
    detail::sweep(cfg, r, chunk, t_end, [&](std::int64_t t, const std::vector<std::uint64_t>& masks) {
      for (const auto& w : B)
        if (w.t == t && masks[static_cast<std::size_t>(w.x - r.x_lo)] != all) {
          ok = false;
          return false;
        }
      return true;
    });
    if (!ok) return false;
  }
  return true;
}

// table[a][b] is 1 iff A[a] reaches B[b] inside the region.
inline std::vector<std::vector<std::uint8_t>> reach_table(const Configuration& cfg, const std::vector<Vertex>& A,
                                                          const std::vector<Vertex>& B, const Region& r) {
  detail::check_region(cfg, r);
  detail::check_inside(r, A);
  detail::check_inside(r, B);
  std::vector<std::vector<std::uint8_t>> table(A.size(), std::vector<std::uint8_t>(B.size(), 0));
  if (A.empty() || B.empty()) return table;
  std::vector<std::size_t> order(B.size());
  for (std::size_t k = 0; k < B.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return B[a].t < B[b].t; });
  const std::int64_t t_end = B[order.back()].t;
  for (std::size_t start = 0; start < A.size(); start += 64) {
    std::vector<Vertex> chunk(A.begin() + static_cast<std::ptrdiff_t>(start),
                              A.begin() + static_cast<std::ptrdiff_t>(std::min(A.size(), start + 64)));
    std::size_t next = 0;
    detail::sweep(cfg, r, chunk, t_end, [&](std::int64_t t, const std::vector<std::uint64_t>& masks) {
      while (next < order.size() && B[order[next]].t < t) ++next;
      for (std::size_t k = next; k < order.size() && B[order[k]].t == t; ++k) {
        std::uint64_t m = masks[static_cast<std::size_t>(B[order[k]].x - r.x_lo)];
        for (std::size_t b = 0; m; ++b, m >>= 1)
          if (m & 1) table[start + b][order[k]] = 1;
      }
      return true;
    });
  }
  return table;
}

// ---- raster export ----

inline void write_raster_text(std::ostream& os, const std::vector<std::vector<std::int64_t>>& rows, const Window& w) {
  std::string line(w.size(), '.');
  for (const auto& row : rows) {
    std::fill(line.begin(), line.end(), '.');
    for (auto x : row) line[static_cast<std::size_t>(x - w.lo)] = '#';
    os << line << '\n';
  }
}

inline void write_raster_pgm(std::ostream& os, const std::vector<std::vector<std::int64_t>>& rows, const Window& w) {
  os << "P2\n" << w.size() << ' ' << rows.size() << "\n255\n";
  std::vector<int> line(w.size());
  for (const auto& row : rows) {
    std::fill(line.begin(), line.end(), 255);
    for (auto x : row) line[static_cast<std::size_t>(x - w.lo)] = 0;
    for (std::size_t k = 0; k < line.size(); ++k) os << line[k] << (k + 1 == line.size() ? '\n' : ' ');
  }
}

}  // namespace lorac
