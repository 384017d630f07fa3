#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bandscheme.hpp"
#include "boxes.hpp"
#include "dynamics.hpp"
#include "environment.hpp"
#include "parallel.hpp"

namespace lorac {

namespace fs = std::filesystem;

// shortest round-trip text
inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// ---- sweep configuration ----

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SweepConfig {
  std::vector<double> p, alpha, q_t, q_x;
  std::int64_t half_width = 0;
  std::int64_t t_max = 0;
  std::uint64_t trials = 0;
  std::uint64_t seed = 0;
  std::string out;
  unsigned jobs = 0;

  void validate() const {
    auto grid = [](const std::vector<double>& g, const char* name, auto ok) {
      if (g.empty()) throw ConfigError(std::string("grid.") + name + ": empty grid");
      for (double v : g)
        if (!ok(v)) throw ConfigError(std::string("grid.") + name + ": value " + fmt_double(v) + " out of range");
    };
    grid(p, "p", [](double v) { return v >= 0.0 && v <= 1.0; });
    grid(alpha, "alpha", [](double v) { return v > 1.0; });
    grid(q_t, "q_t", [](double v) { return v > 0.0 && v < 1.0; });
    grid(q_x, "q_x", [](double v) { return v > 0.0 && v < 1.0; });
    if (half_width < 0) throw ConfigError("run.half_width: must be >= 0");
    if (t_max < 1) throw ConfigError("run.t_max: must be >= 1");
    if (trials < 1) throw ConfigError("run.trials: must be >= 1");
    if (out.empty()) throw ConfigError("run.out: empty path");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <class T>
T parse_number(const std::string& text, const std::string& where) {
  T v{};
  auto t = trim(text);
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size()) throw ConfigError(where + ": cannot parse '" + t + "'");
  return v;
}

}  // namespace detail

// Flat `key = value` lines under [grid] and [run]; every key is mandatory.
inline SweepConfig parse_sweep_config(std::istream& is, const std::string& name = "config") {
  static const std::set<std::string> keys{"grid.p",          "grid.alpha", "grid.q_t",   "grid.q_x",  "run.half_width",
                                          "run.t_max",       "run.trials", "run.seed",   "run.out",   "run.jobs"};
  std::map<std::string, std::pair<std::string, std::string>> seen;  // key -> (value, location)
  std::string line, section;
  for (int no = 1; std::getline(is, line); ++no) {
    std::string where = name + ":" + std::to_string(no);
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "grid" && section != "run") throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside a section");
    std::string key = section + "." + detail::trim(line.substr(0, eq));
    if (!keys.count(key)) throw ConfigError(where + ": unknown key " + key);
    if (seen.count(key)) throw ConfigError(where + ": duplicate key " + key);
    seen[key] = {detail::trim(line.substr(eq + 1)), where};
  }
  for (const auto& k : keys)
    if (!seen.count(k)) throw ConfigError(name + ": missing key " + k);
  auto list = [&](const std::string& k) {
    std::vector<double> v;
    std::stringstream ss(seen[k].first);
    std::string item;
    while (std::getline(ss, item, ',')) v.push_back(detail::parse_number<double>(item, seen[k].second));
    return v;
  };
  SweepConfig c;
  c.p = list("grid.p");
  c.alpha = list("grid.alpha");
  c.q_t = list("grid.q_t");
  c.q_x = list("grid.q_x");
  c.half_width = detail::parse_number<std::int64_t>(seen["run.half_width"].first, seen["run.half_width"].second);
  c.t_max = detail::parse_number<std::int64_t>(seen["run.t_max"].first, seen["run.t_max"].second);
  c.trials = detail::parse_number<std::uint64_t>(seen["run.trials"].first, seen["run.trials"].second);
  c.seed = detail::parse_number<std::uint64_t>(seen["run.seed"].first, seen["run.seed"].second);
  c.jobs = detail::parse_number<unsigned>(seen["run.jobs"].first, seen["run.jobs"].second);
  c.out = seen["run.out"].first;
  c.validate();
  return c;
}

inline SweepConfig load_sweep_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return parse_sweep_config(in, path.string());
}

inline std::string to_config_text(const SweepConfig& c) {
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ", " : "") + fmt_double(v[k]);
    return s;
  };
  std::ostringstream os;
  os << "[grid]\np = " << list(c.p) << "\nalpha = " << list(c.alpha) << "\nq_t = " << list(c.q_t)
     << "\nq_x = " << list(c.q_x) << "\n\n[run]\nhalf_width = " << c.half_width << "\nt_max = " << c.t_max
     << "\ntrials = " << c.trials << "\nseed = " << c.seed << "\nout = " << c.out << "\njobs = " << c.jobs << "\n";
  return os.str();
}

// cells in p-major order
inline std::vector<EnvironmentParams> sweep_cells(const SweepConfig& c) {
  std::vector<EnvironmentParams> out;
  for (double p : c.p)
    for (double a : c.alpha)
      for (double qt : c.q_t)
        for (double qx : c.q_x) out.push_back(EnvironmentParams{qt, qx, p, a});
  return out;
}

// ---- records ----

inline std::string record_to_json(const TrialRecord& r) {
  nlohmann::ordered_json j;
  j["p"] = r.params.p;
  j["alpha"] = r.params.alpha;
  j["q_t"] = r.params.q_t;
  j["q_x"] = r.params.q_x;
  j["trial"] = r.trial;
  j["seed"] = r.seed;
  j["survived"] = r.survived;
  j["extinction_t"] = r.extinction_t ? nlohmann::ordered_json(*r.extinction_t) : nlohmann::ordered_json(nullptr);
  j["max_pop"] = r.max_pop;
  j["max_extent"] = r.max_extent;
  return j.dump();
}

inline TrialRecord record_from_json(const std::string& line) {
  auto j = nlohmann::json::parse(line);
  TrialRecord r;
  r.params = EnvironmentParams{j.at("q_t").get<double>(), j.at("q_x").get<double>(), j.at("p").get<double>(),
                               j.at("alpha").get<double>()};
  r.trial = j.at("trial").get<std::uint64_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.survived = j.at("survived").get<bool>();
  if (!j.at("extinction_t").is_null()) r.extinction_t = j.at("extinction_t").get<std::int64_t>();
  r.max_pop = j.at("max_pop").get<std::uint64_t>();
  r.max_extent = j.at("max_extent").get<std::uint64_t>();
  return r;
}

struct SummaryRow {
  EnvironmentParams params;
  std::uint64_t trials = 0;
  std::uint64_t survived = 0;
  double freq = 0.0;
  WilsonInterval ci;
};

inline SummaryRow summary_row(const EnvironmentParams& params, const std::vector<TrialRecord>& recs) {
  SummaryRow r;
  r.params = params;
  r.trials = recs.size();
  for (const auto& t : recs) r.survived += t.survived;
  r.freq = r.trials ? static_cast<double>(r.survived) / static_cast<double>(r.trials) : 0.0;
  r.ci = wilson_interval(r.survived, r.trials);
  return r;
}

inline std::vector<TrialRecord> read_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open records " + path.string());
  std::vector<TrialRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(record_from_json(line));
  return out;
}

// Recomputes a summary row from a records file alone.
inline SummaryRow summarize_records_file(const fs::path& path) {
  auto recs = read_records(path);
  if (recs.empty()) throw std::runtime_error("empty records file " + path.string());
  return summary_row(recs.front().params, recs);
}

inline const char* summary_header() { return "p,alpha,q_t,q_x,trials,survived,freq,ci_lo,ci_hi"; }

inline std::string summary_line(const SummaryRow& r) {
  return fmt_double(r.params.p) + "," + fmt_double(r.params.alpha) + "," + fmt_double(r.params.q_t) + "," +
         fmt_double(r.params.q_x) + "," + std::to_string(r.trials) + "," + std::to_string(r.survived) + "," +
         fmt_double(r.freq) + "," + fmt_double(r.ci.lo) + "," + fmt_double(r.ci.hi);
}

// ---- sweeps ----

struct SweepOptions {
  std::optional<std::size_t> stop_after;  // cells computed before returning early
  std::ostream* log = nullptr;
};

struct SweepResult {
  std::vector<SummaryRow> rows;
  std::size_t computed = 0;
  std::size_t reused = 0;
  bool complete = false;
};

inline fs::path cell_records_path(const fs::path& out, std::size_t k) {
  char name[32];
  std::snprintf(name, sizeof name, "cell_%04zu.jsonl", k);
  return out / "cells" / name;
}

inline fs::path cell_done_path(const fs::path& out, std::size_t k) {
  auto p = cell_records_path(out, k);
  p.replace_extension(".done");
  return p;
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << text;
    if (!f.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

// Cells with a .done marker are read back instead of recomputed.
inline SweepResult run_sweep(const SweepConfig& cfg, const SweepOptions& opt = {}) {
  cfg.validate();
  const fs::path out(cfg.out);
  fs::create_directories(out / "cells");
  auto cells = sweep_cells(cfg);
  SweepResult res;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    auto rec_path = cell_records_path(out, k), done_path = cell_done_path(out, k);
    if (fs::exists(done_path) && fs::exists(rec_path)) {
      res.rows.push_back(summarize_records_file(rec_path));
      ++res.reused;
      continue;
    }
    if (opt.stop_after && res.computed >= *opt.stop_after) return res;
    auto est = survival_probability(cells[k], cfg.t_max, cfg.trials, cfg.seed, cfg.half_width, cfg.jobs);
    std::string text;
    for (const auto& r : est.records) text += record_to_json(r) + "\n";
    write_text_file(rec_path, text);
    write_text_file(done_path, "");
    res.rows.push_back(summary_row(cells[k], est.records));
    ++res.computed;
    if (opt.log) *opt.log << "cell " << k << ": " << summary_line(res.rows.back()) << "\n";
  }
  std::string csv = std::string(summary_header()) + "\n";
  for (const auto& r : res.rows) csv += summary_line(r) + "\n";
  write_text_file(out / "summary.csv", csv);
  res.complete = true;
  return res;
}

// ---- critical point bracket ----

struct PcOptions {
  std::uint64_t trials = 200;
  std::int64_t t_max = 200;
  std::int64_t half_width = 500;
  std::uint64_t seed = 1;
  unsigned jobs = 0;
  double lo = 0.0;
  double hi = 1.0;
};

struct PcResult {
  double lo = 0.0;
  double hi = 1.0;
  double freq_lo = 0.0;
  double freq_hi = 1.0;
  std::vector<std::pair<double, double>> evaluations;  // (p, frequency)
};

// Bisection on p with common random numbers across p.
inline PcResult estimate_pc(double alpha, double q_t, double q_x, double threshold, double tolerance, const PcOptions& o = {}) {
  if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
  if (!(o.lo < o.hi)) throw std::invalid_argument("empty initial interval");
  PcResult r;
  auto freq = [&](double p) {
    double f = survival_probability(EnvironmentParams{q_t, q_x, p, alpha}, o.t_max, o.trials, o.seed, o.half_width, o.jobs).frequency;
    r.evaluations.emplace_back(p, f);
    return f;
  };
  r.lo = o.lo;
  r.hi = o.hi;
  r.freq_lo = freq(r.lo);
  r.freq_hi = freq(r.hi);
  if (!(r.freq_lo <= threshold && threshold <= r.freq_hi))
    throw std::invalid_argument("initial interval does not bracket the threshold");
  while (r.hi - r.lo > tolerance) {
    double mid = 0.5 * (r.lo + r.hi), f = freq(mid);
    if (f >= threshold) {
      r.hi = mid;
      r.freq_hi = f;
    } else {
      r.lo = mid;
      r.freq_lo = f;
    }
  }
  return r;
}

// ---- band report ----

struct BandReportResult {
  bool terminal = false;
  std::size_t merges = 0;
  std::size_t bands = 0;
};

inline BandReportResult band_report(std::ostream& os, const StretchSequence& n, const MergeParams& mp, std::size_t max_steps) {
  auto p = run_to_fixpoint(n, mp, max_steps);
  BandReportResult r{p.terminal(), p.merges(), p.band_count()};
  os << "# " << (r.terminal ? "terminal" : "partial: merge budget exceeded") << " s=" << mp.s << " d_inv=" << mp.d_inv
     << " merges=" << r.merges << " bands=" << r.bands << "\n# bands: m lo hi label simple censored\n";
  write_band_report(os, p);
  os << "# history: k i j D label\n";
  write_merge_history(os, p);
  return r;
}

// ---- snapshot ----

struct Snapshot {
  SimResult sim;
  Window window;
};

inline Snapshot snapshot(const EnvironmentParams& params, std::uint64_t seed, std::int64_t t_max, std::int64_t half_width,
                         std::uint64_t trial = 0) {
  auto cfg = make_trial_configuration(params, seed, trial, half_width, t_max);
  Snapshot s{simulate(cfg, 0, t_max, true), cfg.space_window()};
  s.sim.record.trial = trial;
  return s;
}

// ---- audits ----

struct AuditReport {
  std::string suite;
  bool passed = false;
  std::size_t checked = 0;
  std::size_t violations = 0;
  std::vector<std::string> counterexamples;  // at most 10
  nlohmann::ordered_json details = nlohmann::ordered_json::object();
  double seconds = 0.0;

  AuditReport() = default;
  explicit AuditReport(std::string name) : suite(std::move(name)) {}

  void violation(const std::string& what) {
    ++violations;
    if (counterexamples.size() < 10) counterexamples.push_back(what);
  }

  std::string json() const {
    nlohmann::ordered_json j;
    j["suite"] = suite;
    j["passed"] = passed;
    j["checked"] = checked;
    j["violations"] = violations;
    j["counterexamples"] = counterexamples;
    j["details"] = details;
    j["seconds"] = seconds;
    return j.dump();
  }
};

struct AuditOptions {
  std::size_t budget = 0;  // 0 = suite default
  std::uint64_t seed = 1234;
  unsigned jobs = 0;
};

// Geometric corpus shared by the band audits.
struct CorpusSpec {
  double q = 0.05;
  std::int64_t half_width = 2000;
  MergeParams mp{32, 12};
};

inline StretchSequence corpus_environment(const CorpusSpec& c, std::uint64_t seed, std::size_t k) {
  Stream st(seed, Purpose::audit, {static_cast<std::int64_t>(k)});
  return sample_geometric_stretches(c.q, centered_window(c.half_width), st);
}

namespace audits {

inline std::size_t pick(std::size_t budget, std::size_t def) { return budget ? budget : def; }

inline AuditReport compositions(const AuditOptions&) {
  AuditReport r{"compositions"};
  for (std::uint64_t S = 1; S <= 20; ++S) {
    auto c = compositions_count(S);
    ++r.checked;
    std::uint64_t expect = std::uint64_t{1} << (S - 1);
    if (c.exact != expect || c.enumerated != expect)
      r.violation("S=" + std::to_string(S) + " closed form " + std::to_string(c.exact) + " enumerated " +
                  std::to_string(c.enumerated));
  }
  r.passed = r.violations == 0;
  return r;
}

inline AuditReport band_size_limit(const AuditOptions& o, const CorpusSpec& c = {}) {
  AuditReport r{"band-size-limit"};
  const std::size_t envs = pick(o.budget, 1000);
  std::vector<std::size_t> size_bad(envs), weight_bad(envs), checked(envs), exhausted(envs);
  std::vector<std::string> first(envs);
  parallel_for(envs, o.jobs, [&](std::size_t e) {
    auto p = run_to_fixpoint(corpus_environment(c, o.seed, e), c.mp);
    exhausted[e] = !p.terminal();
    for (std::size_t pos = 0; pos < p.band_count(); ++pos) {
      if (p.censored_pos(pos)) continue;
      auto id = p.current()[pos];
      ++checked[e];
      const auto& b = p.node(id);
      std::string where = "env " + std::to_string(e) + " band [" + std::to_string(b.lo) + "," + std::to_string(b.hi) +
                          "] label " + b.label.str();
      if (!band_size_ok(p, id)) {
        ++size_bad[e];
        if (first[e].empty()) first[e] = where + ": extent above (s/2)^(l-1)";
      }
      if (!band_weight(p, id).ok()) {
        ++weight_bad[e];
        if (first[e].empty()) first[e] = where + ": weight above bound";
      }
    }
  });
  std::size_t sb = 0, wb = 0, ex = 0;
  for (std::size_t e = 0; e < envs; ++e) {
    r.checked += checked[e];
    sb += size_bad[e];
    wb += weight_bad[e];
    ex += exhausted[e];
    for (std::size_t k = 0; k < size_bad[e] + weight_bad[e]; ++k) r.violation(first[e]);
  }
  r.details["environments"] = envs;
  r.details["size_violations"] = sb;
  r.details["weight_violations"] = wb;
  r.details["non_terminal"] = ex;
  r.passed = r.violations == 0 && ex == 0;
  return r;
}

inline AuditReport neighbour_spacing(const AuditOptions& o, const CorpusSpec& c = {}) {
  AuditReport r{"neighbour-spacing"};
  const std::size_t envs = pick(o.budget, 1000);
  std::vector<RegularityReport> reps(envs);
  parallel_for(envs, o.jobs, [&](std::size_t e) { reps[e] = is_regular(run_to_fixpoint(corpus_environment(c, o.seed, e), c.mp)); });
  std::size_t upper = 0;
  for (std::size_t e = 0; e < envs; ++e) {
    r.checked += reps[e].pairs_checked;
    upper += reps[e].upper_violations;
    for (const auto& v : reps[e].violations)
      if (v.lower)
        r.violation("env " + std::to_string(e) + " level " + std::to_string(v.level) + " bands m=" + std::to_string(v.m1) +
                    "," + std::to_string(v.m2) + " distance " + std::to_string(v.distance));
  }
  r.details["environments"] = envs;
  r.details["upper_spacing_exceedances"] = upper;  // not a violation for natural partitions
  r.passed = r.violations == 0;
  return r;
}

inline AuditReport regularization(const AuditOptions& o, const CorpusSpec& c = {}) {
  AuditReport r{"regularization"};
  const std::size_t envs = pick(o.budget, 200);
  struct Out {
    bool reg_ok = false, vr_ok = false;
    std::string reg_why, vr_why;
  };
  std::vector<Out> outs(envs);
  parallel_for(envs, o.jobs, [&](std::size_t e) {
    auto n = corpus_environment(c, o.seed, e);
    auto base = run_to_fixpoint(n, c.mp);
    auto& out = outs[e];
    try {
      auto reg = make_regular(n, c.mp);
      auto again = run_to_fixpoint(reg.n, c.mp);
      if (!same_bands(base, again)) out.reg_why = "make_regular changed band intervals";
      else if (!is_regular(again, 6).regular()) out.reg_why = "make_regular output fails the regularity check";
      else out.reg_ok = true;
    } catch (const std::exception& ex) {
      out.reg_why = std::string("make_regular: ") + ex.what();
    }
    try {
      auto vr = make_very_regular(n, c.mp);
      auto again = run_to_fixpoint(vr.n, c.mp);
      if (!same_bands(base, again)) out.vr_why = "make_very_regular changed band intervals";
      else if (base.labels() != again.labels()) out.vr_why = "make_very_regular changed final labels";
      else if (!is_very_regular(again).ok) out.vr_why = "make_very_regular output fails the very-regular check";
      else out.vr_ok = true;
    } catch (const std::exception& ex) {
      out.vr_why = std::string("make_very_regular: ") + ex.what();
    }
  });
  std::size_t reg_fail = 0, vr_fail = 0;
  for (std::size_t e = 0; e < envs; ++e) {
    r.checked += 2;
    if (!outs[e].reg_ok) {
      ++reg_fail;
      r.violation("env " + std::to_string(e) + ": " + outs[e].reg_why);
    }
    if (!outs[e].vr_ok) {
      ++vr_fail;
      r.violation("env " + std::to_string(e) + ": " + outs[e].vr_why);
    }
  }
  r.details["environments"] = envs;
  r.details["make_regular_failures"] = reg_fail;
  r.details["make_very_regular_failures"] = vr_fail;
  r.passed = r.violations == 0;
  return r;
}

inline AuditReport segment_counts(const AuditOptions& o, const CorpusSpec& c = {}) {
  AuditReport r{"segment-counts"};
  const std::size_t envs = pick(o.budget, 200);
  std::vector<std::vector<SegmentCountViolation>> bad(envs);
  std::vector<std::size_t> pairs(envs);
  std::vector<std::string> err(envs);
  parallel_for(envs, o.jobs, [&](std::size_t e) {
    try {
      auto reg = make_regular(corpus_environment(c, o.seed, e), c.mp);
      bad[e] = segment_count_audit(run_to_fixpoint(reg.n, c.mp), &pairs[e]);
    } catch (const std::exception& ex) {
      err[e] = ex.what();
    }
  });
  for (std::size_t e = 0; e < envs; ++e) {
    r.checked += pairs[e];
    if (!err[e].empty()) r.violation("env " + std::to_string(e) + ": " + err[e]);
    for (const auto& v : bad[e])
      r.violation("env " + std::to_string(e) + " level " + std::to_string(v.level) + " positions " + std::to_string(v.pos_a) +
                  ".." + std::to_string(v.pos_b) + " k=" + std::to_string(v.k));
  }
  r.details["environments"] = envs;
  r.passed = r.violations == 0;
  return r;
}

inline AuditReport q_estimates(const AuditOptions& o, const CorpusSpec& c = {}) {
  AuditReport r{"q-estimates"};
  const std::size_t envs = pick(o.budget, 1000);
  std::vector<std::size_t> merges(envs), vr(envs), extra(envs);
  std::vector<std::vector<std::string>> bad(envs);
  std::vector<std::map<std::uint64_t, std::size_t>> qs(envs);
  parallel_for(envs, o.jobs, [&](std::size_t e) {
    auto p = run_to_fixpoint(corpus_environment(c, o.seed, e), c.mp);
    for (std::size_t id = p.leaf_count(); id < p.nodes().size(); ++id) {
      auto nid = static_cast<std::int32_t>(id);
      if (p.censored(nid) || p.node(nid).label.is_inf()) continue;
      ++merges[e];
      if (!merge_gap_check(p, nid).ok) continue;
      ++vr[e];
      auto d = q_diagnostics(p, nid);
      ++qs[e][d.q];
      extra[e] += d.extra_applicable;
      if (!d.core_ok())
        bad[e].push_back("env " + std::to_string(e) + " node " + std::to_string(id) + " m=" + std::to_string(d.m) +
                         " r=" + std::to_string(d.r) + " q=" + std::to_string(d.q) + " n=" + std::to_string(d.n) +
                         " sigma=" + std::to_string(d.sigma));
    }
  });
  std::size_t all = 0, ex = 0;
  std::map<std::uint64_t, std::size_t> qhist;
  for (std::size_t e = 0; e < envs; ++e) {
    all += merges[e];
    r.checked += vr[e];
    ex += extra[e];
    for (auto& [q, k] : qs[e]) qhist[q] += k;
    for (auto& b : bad[e]) r.violation(b);
  }
  r.details["environments"] = envs;
  r.details["interior_merges"] = all;
  r.details["very_regular_merges"] = r.checked;
  r.details["extra_estimates_applicable"] = ex;
  nlohmann::ordered_json h = nlohmann::ordered_json::object();
  for (auto& [q, k] : qhist) h[std::to_string(q)] = k;
  r.details["q_histogram"] = h;
  r.passed = r.violations == 0 && r.checked > 0;
  return r;
}

inline AuditReport label_decay(const AuditOptions& o) {
  AuditReport r{"label-decay"};
  const std::size_t windows = pick(o.budget, 10000);
  auto d = label_decay_statistics(1e-3, MergeParams{32, 12}, windows, 1000, o.seed, 1000000, o.jobs);
  std::size_t top = 1;
  for (std::size_t l = 1; l < d.at_least.size(); ++l)
    if (d.at_least[l] > 0) top = l;
  nlohmann::ordered_json freq = nlohmann::ordered_json::array();
  for (std::size_t l = 1; l <= top; ++l) freq.push_back(d.frequency[l]);
  nlohmann::ordered_json flat = nlohmann::ordered_json::array();
  for (std::size_t l = 1; l < top; ++l) {
    ++r.checked;
    if (d.frequency[l + 1] > d.frequency[l]) r.violation("frequency increases from level " + std::to_string(l));
    if (d.frequency[l + 1] == d.frequency[l]) flat.push_back(l);
  }
  // least-squares slope of log frequency over the observed levels
  double slope = 0.0;
  if (top >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0, k = 0;
    for (std::size_t l = 1; l <= top; ++l) {
      double x = static_cast<double>(l), y = std::log(d.frequency[l]);
      sx += x, sy += y, sxx += x * x, sxy += x * y, k += 1;
    }
    slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    ++r.checked;
    if (!(std::exp(slope) < 1.0)) r.violation("fitted ratio not below 1");
  }
  r.details["windows"] = windows;
  r.details["frequency_at_least"] = freq;
  r.details["fitted_ratio"] = std::exp(slope);
  r.details["flat_levels"] = flat;
  r.details["non_terminal"] = d.exhausted;
  r.details["origin_band_censored"] = d.censored;
  r.passed = r.violations == 0 && top >= 2 && d.exhausted == 0;
  return r;
}

// Cell of the extinction bound.
inline EnvironmentParams extinction_cell() { return EnvironmentParams{0.4, 0.4, 0.2, 3.0}; }
inline constexpr std::int64_t survival_half_width = 1000;

inline AuditReport extinction(const AuditOptions& o) {
  AuditReport r{"extinction"};
  const std::size_t trials = pick(o.budget, 500);
  auto est = survival_probability(extinction_cell(), 200, trials, o.seed, survival_half_width, o.jobs);
  r.checked = trials;
  r.details["frequency"] = est.frequency;
  r.details["ci_lo"] = est.ci.lo;
  r.details["ci_hi"] = est.ci.hi;
  r.details["mean_offspring_bound"] = mean_offspring_bound(3.0, 0.2);
  if (est.frequency > 0.01) r.violation("survival frequency " + fmt_double(est.frequency) + " above 0.01");
  r.passed = r.violations == 0;
  return r;
}

inline AuditReport coupling_monotone(const AuditOptions& o) {
  AuditReport r{"coupling-monotone"};
  const std::size_t runs = pick(o.budget, 100);
  const std::int64_t t_max = 100, hw = 200;
  std::vector<std::string> bad(runs);
  std::vector<std::size_t> steps(runs);
  parallel_for(runs, o.jobs, [&](std::size_t k) {
    Stream st(o.seed, Purpose::audit, {static_cast<std::int64_t>(k), 9});
    double p1 = 0.3 + 0.7 * st.uniform(), p2 = 0.3 + 0.7 * st.uniform();
    if (p1 > p2) std::swap(p1, p2);
    double alpha = 1.5 + 2.0 * st.uniform();
    auto c1 = make_trial_configuration(EnvironmentParams{0.4, 0.4, p1, alpha}, o.seed, k, hw, t_max);
    auto c2 = make_trial_configuration(EnvironmentParams{0.4, 0.4, p2, alpha}, o.seed, k, hw, t_max);
    InfectionState a{0, {}}, b{0, {}};
    if (c1.vertex_open(0, 0)) a.infected.push_back(0);
    if (c2.vertex_open(0, 0)) b.infected.push_back(0);
    for (std::int64_t t = 0;; ++t) {
      ++steps[k];
      if (!std::includes(b.infected.begin(), b.infected.end(), a.infected.begin(), a.infected.end())) {
        bad[k] = "run " + std::to_string(k) + " t=" + std::to_string(t) + " p1=" + fmt_double(p1) + " p2=" + fmt_double(p2);
        return;
      }
      if (t == t_max || b.infected.empty()) return;
      a = step(a, c1);
      b = step(b, c2);
    }
  });
  for (std::size_t k = 0; k < runs; ++k) {
    r.checked += steps[k];
    if (!bad[k].empty()) r.violation(bad[k]);
  }
  r.details["runs"] = runs;
  r.passed = r.violations == 0;
  return r;
}

// Plain depth-first search over the layered graph, used as an oracle.
inline std::vector<std::uint8_t> dfs_reach(const Configuration& cfg, const Vertex& src, const Region& reg) {
  const auto W = static_cast<std::size_t>(reg.x_hi - reg.x_lo + 1), H = static_cast<std::size_t>(reg.t_hi - reg.t_lo + 1);
  std::vector<std::uint8_t> seen(W * H, 0);
  auto idx = [&](const Vertex& v) { return static_cast<std::size_t>(v.t - reg.t_lo) * W + static_cast<std::size_t>(v.x - reg.x_lo); };
  if (!cfg.vertex_open(src.t, src.x)) return seen;
  std::vector<Vertex> stack{src};
  seen[idx(src)] = 1;
  while (!stack.empty()) {
    auto v = stack.back();
    stack.pop_back();
    if (v.t == reg.t_hi) continue;
    for (std::int64_t y = reg.x_lo; y <= reg.x_hi; ++y) {
      Vertex w{v.t + 1, y};
      if (seen[idx(w)] || !cfg.edge_open(v.t, v.x, y) || !cfg.vertex_open(w.t, w.x)) continue;
      seen[idx(w)] = 1;
      stack.push_back(w);
    }
  }
  return seen;
}

inline AuditReport reachability(const AuditOptions& o) {
  AuditReport r{"reachability"};
  const std::size_t reals = pick(o.budget, 1000);
  std::vector<std::vector<std::string>> bad(reals);
  std::vector<std::size_t> checks(reals);
  parallel_for(reals, o.jobs, [&](std::size_t k) {
    Stream st(o.seed, Purpose::audit, {static_cast<std::int64_t>(k), 10});
    EnvironmentParams ep{0.4, 0.4, 0.5 + 0.5 * st.uniform(), 1.2 + 2.0 * st.uniform()};
    auto nt = sample_geometric_stretches(ep.q_t, Window{0, 19}, st);
    auto nx = sample_geometric_stretches(ep.q_x, Window{0, 19}, st);
    Configuration cfg(ep, nt, nx, st());
    Region reg{0, 19, 0, 19};
    auto fail = [&](const std::string& w) { bad[k].push_back("realization " + std::to_string(k) + ": " + w); };
    // frontier simulation from each open vertex of row 0 against the oracle
    for (std::int64_t x0 = 0; x0 < 20; ++x0) {
      auto seen = dfs_reach(cfg, {0, x0}, reg);
      InfectionState s{0, {}};
      if (cfg.vertex_open(0, x0)) s.infected.push_back(x0);
      for (std::int64_t t = 0; t <= 19; ++t) {
        std::vector<std::int64_t> expect;
        for (std::int64_t y = 0; y < 20; ++y)
          if (seen[static_cast<std::size_t>(t * 20 + y)]) expect.push_back(y);
        ++checks[k];
        if (expect != s.infected) {
          fail("frontier from x=" + std::to_string(x0) + " differs at t=" + std::to_string(t));
          break;
        }
        if (t < 19) s = step(s, cfg);
      }
    }
    // set queries
    for (int q = 0; q < 5; ++q) {
      std::vector<Vertex> A, B;
      auto pick_set = [&](std::vector<Vertex>& S, std::int64_t tlo, std::int64_t thi) {
        auto m = 1 + static_cast<int>(st.uniform() * 4);
        for (int i = 0; i < m; ++i)
          S.push_back({tlo + static_cast<std::int64_t>(st.uniform() * static_cast<double>(thi - tlo + 1)),
                       static_cast<std::int64_t>(st.uniform() * 20)});
      };
      pick_set(A, 0, 9);
      pick_set(B, 5, 19);
      bool any = false, all = true;
      for (const auto& a : A) {
        auto seen = dfs_reach(cfg, a, reg);
        for (const auto& b : B) {
          bool hit = seen[static_cast<std::size_t>(b.t * 20 + b.x)] != 0;
          any = any || hit;
          all = all && hit;
        }
      }
      checks[k] += 2;
      if (reachable(cfg, A, B, reg) != any) fail("reachable disagrees with the oracle");
      if (reachable_ffc(cfg, A, B, reg) != all) fail("reachable_ffc disagrees with the oracle");
    }
  });
  for (std::size_t k = 0; k < reals; ++k) {
    r.checked += checks[k];
    for (auto& b : bad[k]) r.violation(b);
  }
  r.details["realizations"] = reals;
  r.passed = r.violations == 0;
  return r;
}

inline AuditReport union_bound(const AuditOptions& o) {
  AuditReport r{"union-bound"};
  const std::size_t n = pick(o.budget, 10000);
  Stream st(o.seed, Purpose::audit, {11});
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> ps(1 + static_cast<std::size_t>(st.uniform() * 20));
    double scale = std::pow(10.0, -6.0 * st.uniform());
    for (auto& p : ps) p = std::min(0.999999, std::max(1e-12, scale * st.uniform()));
    double c = 0.01 + 5.0 * st.uniform();
    auto u = union_lower_bound(ps, c);
    ++r.checked;
    if (!u.holds()) r.violation("instance " + std::to_string(k) + " lhs " + fmt_double(u.lhs) + " rhs " + fmt_double(u.rhs));
  }
  r.passed = r.violations == 0;
  return r;
}

inline AuditReport recursion(const AuditOptions& o) {
  AuditReport r{"recursion"};
  const std::size_t n = pick(o.budget, 10000);
  Stream st(o.seed, Purpose::audit, {12});
  std::size_t skipped = 0;
  for (std::size_t k = 0; k < n; ++k) {
    auto C = 2 + static_cast<std::uint64_t>(st.uniform() * 999);
    auto lvl = 1 + static_cast<std::uint64_t>(st.uniform() * 20);
    double pp = st.uniform() * std::pow(static_cast<double>(C), -6.0 / static_cast<double>(lvl + 1));
    pp = std::max(pp, 1e-300);
    double x = st.uniform() * std::pow(pp, static_cast<double>(lvl + 1));
    auto c = multiscale_recursion_check_bad(C, pp, x, lvl);
    ++r.checked;
    if (!c.preconditions) {  // rounding in 1 - x can push x past pp^(n+1)
      ++skipped;
      continue;
    }
    if (!c.chain)
      r.violation("instance " + std::to_string(k) + " C=" + std::to_string(C) + " pp=" + fmt_double(pp) + " n=" + std::to_string(lvl));
  }
  r.details["precondition_skipped"] = skipped;
  r.passed = r.violations == 0;
  return r;
}

inline AuditReport space_dominance(const AuditOptions& o) {
  AuditReport r{"space-dominance"};
  const std::size_t n = pick(o.budget, 10000);
  Stream st(o.seed, Purpose::audit, {13});
  std::size_t reverse = 0;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<std::uint64_t> N(1 + static_cast<std::size_t>(st.uniform() * 5));
    for (auto& v : N) v = sample_geometric(0.5, st);
    double alpha = 1.0 + 3.0 * st.uniform() + 1e-9, gamma = 1.0 + 3.0 * st.uniform();
    auto d = lorac::space_dominance(N, alpha, gamma);
    ++r.checked;
    reverse += d.lhs >= d.rhs;
    if (!d.holds()) {
      std::string ns;
      for (auto v : N) ns += (ns.empty() ? "" : " ") + std::to_string(v);
      r.violation("N=(" + ns + ") alpha=" + fmt_double(alpha) + " gamma=" + fmt_double(gamma) + " lhs=" + fmt_double(d.lhs) +
                  " rhs=" + fmt_double(d.rhs));
    }
  }
  r.details["note"] = "direct evaluation of (1+sum N)^-alpha <= (1+sum ceil(N/gamma))^-(gamma alpha)";
  r.details["reverse_inequality_holds"] = reverse;
  r.passed = r.violations == 0;
  return r;
}

struct BoxConnectivityStats {
  std::size_t realizations = 0;
  std::size_t with_good_upper = 0;  // realizations with a good box at level >= 2
  std::size_t good_boxes[4] = {0, 0, 0, 0};
  std::size_t inside_checks = 0;
  std::size_t grid_pairs = 0;
  std::size_t tree_checks = 0;
};

inline ExerciseLayout exercise_layout() { return ExerciseLayout{3, 16, 20, 5}; }
inline BoxParams exercise_box_params() { return BoxParams::exercise(3, 3, 7); }
inline EnvironmentParams exercise_env_params() { return EnvironmentParams{0.4, 0.4, 0.9999, 1.1}; }

inline AuditReport box_connectivity(const AuditOptions& o) {
  AuditReport r{"box-connectivity"};
  const std::size_t reals = pick(o.budget, 60);
  auto env = exercise_environment(exercise_layout());
  BoxHierarchy h(env.time, env.space, exercise_box_params(), 3);
  std::vector<std::vector<std::string>> bad(reals);
  std::vector<BoxConnectivityStats> st(reals);
  parallel_for(reals, o.jobs, [&](std::size_t k) {
    Configuration cfg(exercise_env_params(), env.nt, env.nx, derive_key(o.seed, Purpose::fixture, {static_cast<std::int64_t>(k)}));
    GoodnessEvaluator ev(h, cfg);
    auto& s = st[k];
    s.realizations = 1;
    bool upper = false;
    for (std::uint64_t n = 1; n <= h.max_level(); ++n) {
      const auto& L = h.level(n);
      for (std::size_t row = 0; row < L.rows.size(); ++row)
        for (std::size_t col = 0; col < L.cols.size(); ++col) {
          BoxRef b{n, row, col};
          if (!ev.box_good(b)) continue;
          ++s.good_boxes[n];
          upper = upper || n >= 2;
          std::string where = "realization " + std::to_string(k) + " level " + std::to_string(n) + " box (" +
                              std::to_string(row) + "," + std::to_string(col) + ")";
          auto ic = check_inside_connectivity(ev, b);
          ++s.inside_checks;
          if (!ic.ok()) bad[k].push_back(where + ": inputs do not reach outputs");
          if (n >= 2) {
            auto rb = check_reachable_boxes(ev, b);
            s.grid_pairs += rb.pairs;
            if (!rb.ok()) bad[k].push_back(where + ": grid traversal failed for " + std::to_string(rb.failures) + " pairs");
            for (std::size_t i = 0; i + 1 < h.l_t(b); ++i)
              for (std::size_t j = 0; j < h.l_x(b); ++j) {
                auto a = h.child(b, i, j), c = h.child(b, i + 1, j);
                if (!ev.box_good(a) || !ev.box_good(c)) continue;
                ++s.tree_checks;
                try {
                  if (!check_tree(ev, a, c, extract_tree(ev, a, c)).ok()) bad[k].push_back(where + ": tree containment failed");
                } catch (const std::exception& ex) {
                  bad[k].push_back(where + ": " + ex.what());
                }
              }
          }
        }
    }
    s.with_good_upper = upper;
  });
  BoxConnectivityStats tot;
  for (std::size_t k = 0; k < reals; ++k) {
    tot.realizations += st[k].realizations;
    tot.with_good_upper += st[k].with_good_upper;
    for (int n = 1; n <= 3; ++n) tot.good_boxes[n] += st[k].good_boxes[n];
    tot.inside_checks += st[k].inside_checks;
    tot.grid_pairs += st[k].grid_pairs;
    tot.tree_checks += st[k].tree_checks;
    for (auto& b : bad[k]) r.violation(b);
  }
  r.checked = tot.inside_checks + tot.grid_pairs + tot.tree_checks;
  r.details["realizations"] = tot.realizations;
  r.details["realizations_with_good_level_2_or_3_box"] = tot.with_good_upper;
  r.details["good_boxes_by_level"] = {tot.good_boxes[1], tot.good_boxes[2], tot.good_boxes[3]};
  r.details["grid_pairs"] = tot.grid_pairs;
  r.details["tree_checks"] = tot.tree_checks;
  r.passed = r.violations == 0 && tot.with_good_upper >= 50;
  return r;
}

inline AuditReport survival_smoke(const AuditOptions& o) {
  AuditReport r{"survival-smoke"};
  const std::size_t trials = pick(o.budget, 200);
  EnvironmentParams hi{0.4, 0.4, 0.95, 3.0};
  auto est = survival_probability(hi, 500, trials, o.seed, survival_half_width, o.jobs);
  auto low = survival_probability(extinction_cell(), 200, 500, o.seed, survival_half_width, o.jobs);
  r.checked = trials;
  r.details["frequency"] = est.frequency;
  r.details["reference_frequency"] = low.frequency;
  if (!(est.frequency > low.frequency)) r.violation("survival at p=0.95 not above the p=0.2 cell");
  std::optional<std::uint64_t> shown;
  for (const auto& rec : est.records)
    if (rec.survived) {
      auto snap = snapshot(hi, o.seed, 500, survival_half_width, rec.trial);
      if (!snap.sim.raster.empty() && !snap.sim.raster.back().empty() && snap.sim.raster.size() == 501) shown = rec.trial;
      break;
    }
  if (shown) r.details["raster_trial"] = *shown;
  else r.violation("no trial renders a nonempty raster at t_max");
  r.passed = r.violations == 0;
  return r;
}

}  // namespace audits

using AuditFn = std::function<AuditReport(const AuditOptions&)>;

inline const std::vector<std::pair<std::string, AuditFn>>& audit_suites() {
  static const std::vector<std::pair<std::string, AuditFn>> suites{
      {"compositions", audits::compositions},
      {"band-size-limit", [](const AuditOptions& o) { return audits::band_size_limit(o); }},
      {"neighbour-spacing", [](const AuditOptions& o) { return audits::neighbour_spacing(o); }},
      {"regularization", [](const AuditOptions& o) { return audits::regularization(o); }},
      {"segment-counts", [](const AuditOptions& o) { return audits::segment_counts(o); }},
      {"q-estimates", [](const AuditOptions& o) { return audits::q_estimates(o); }},
      {"label-decay", audits::label_decay},
      {"extinction", audits::extinction},
      {"coupling-monotone", audits::coupling_monotone},
      {"reachability", audits::reachability},
      {"union-bound", audits::union_bound},
      {"recursion", audits::recursion},
      {"space-dominance", audits::space_dominance},
      {"box-connectivity", audits::box_connectivity},
      {"survival-smoke", audits::survival_smoke},
  };
  return suites;
}

inline AuditReport run_audit(const std::string& suite, const AuditOptions& o = {}) {
  for (const auto& [name, fn] : audit_suites())
    if (name == suite) {
      auto t0 = std::chrono::steady_clock::now();
      auto r = fn(o);
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return r;
    }
  throw std::invalid_argument("unknown audit suite: " + suite);
}

}  // namespace lorac
