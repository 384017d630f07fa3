#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lorac/lorac.hpp"

namespace fs = std::filesystem;
using namespace lorac;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  std::int64_t window = 1000;
  std::string out;
  unsigned jobs = 0;
};

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

// Writes to --out when given, else stdout.
template <class F>
void emit(const std::string& out, F&& f) {
  if (out.empty()) {
    f(std::cout);
  } else {
    auto os = open_out(out);
    f(os);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lorac: contact dynamics in a random space-time environment"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "master seed")->capture_default_str();
  app.add_option("--window", g.window, "spatial half-width")->capture_default_str();
  app.add_option("--out", g.out, "output file or directory");
  app.add_option("--jobs", g.jobs, "worker threads (0 = all cores)")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "run a parameter sweep from a config file");
  std::string config_path;
  sweep->add_option("config", config_path, "sweep config")->required()->check(CLI::ExistingFile);

  auto* pc = app.add_subcommand("pc", "bisect p for a survival threshold");
  double pc_alpha = 3.0, pc_qt = 0.4, pc_qx = 0.4, pc_theta = 0.5, pc_tol = 0.05;
  PcOptions pco;
  pc->add_option("--alpha", pc_alpha)->capture_default_str();
  pc->add_option("--q-t", pc_qt)->capture_default_str();
  pc->add_option("--q-x", pc_qx)->capture_default_str();
  pc->add_option("--threshold", pc_theta)->capture_default_str();
  pc->add_option("--tolerance", pc_tol)->capture_default_str();
  pc->add_option("--trials", pco.trials)->capture_default_str();
  pc->add_option("--t-max", pco.t_max)->capture_default_str();
  pc->add_option("--lo", pco.lo)->capture_default_str();
  pc->add_option("--hi", pco.hi)->capture_default_str();

  auto* band = app.add_subcommand("band-report", "merge a stretch sequence and dump bands and history");
  std::string env_path;
  double band_q = 0.05;
  MergeParams mp{32, 12};
  std::size_t max_steps = 1000000;
  band->add_option("--env", env_path, "environment file (default: generate geometric stretches)");
  band->add_option("--q", band_q, "geometric parameter when generating")->capture_default_str();
  band->add_option("--s", mp.s)->capture_default_str();
  band->add_option("--d-inv", mp.d_inv)->capture_default_str();
  band->add_option("--max-steps", max_steps)->capture_default_str();

  auto* snap = app.add_subcommand("snapshot", "render one space-time infection raster");
  EnvironmentParams sp{0.4, 0.4, 0.95, 3.0};
  std::int64_t snap_t = 500;
  std::uint64_t snap_trial = 0;
  std::string format = "pgm";
  snap->add_option("--p", sp.p)->capture_default_str();
  snap->add_option("--alpha", sp.alpha)->capture_default_str();
  snap->add_option("--q-t", sp.q_t)->capture_default_str();
  snap->add_option("--q-x", sp.q_x)->capture_default_str();
  snap->add_option("--t-max", snap_t)->capture_default_str();
  snap->add_option("--trial", snap_trial)->capture_default_str();
  snap->add_option("--format", format)->check(CLI::IsMember({"pgm", "txt"}))->capture_default_str();

  auto* audit = app.add_subcommand("audit", "run invariant audits");
  std::vector<std::string> suites;
  std::size_t budget = 0;
  bool list = false;
  audit->add_option("suite", suites, "suite names or 'all'");
  audit->add_option("--budget", budget, "instances per suite (0 = default)");
  audit->add_flag("--list", list, "list suites");

  auto* dump = app.add_subcommand("hierarchy-dump", "dump the exercise box hierarchy with goodness flags");
  std::uint64_t realization = 0;
  bool no_goodness = false;
  dump->add_option("--realization", realization)->capture_default_str();
  dump->add_flag("--no-goodness", no_goodness);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), 1);
  }

  try {
    if (*sweep) {
      auto cfg = load_sweep_config(config_path);
      if (!g.out.empty()) cfg.out = g.out;
      if (app.count("--jobs")) cfg.jobs = g.jobs;
      auto res = run_sweep(cfg, SweepOptions{std::nullopt, &std::cerr});
      std::cout << "cells " << res.rows.size() << " computed " << res.computed << " reused " << res.reused << "\n";
    } else if (*pc) {
      pco.seed = g.seed;
      pco.half_width = g.window;
      pco.jobs = g.jobs;
      auto r = estimate_pc(pc_alpha, pc_qt, pc_qx, pc_theta, pc_tol, pco);
      emit(g.out, [&](std::ostream& os) {
        os << "p_lo,p_hi,freq_lo,freq_hi\n"
           << fmt_double(r.lo) << "," << fmt_double(r.hi) << "," << fmt_double(r.freq_lo) << "," << fmt_double(r.freq_hi)
           << "\n";
      });
    } else if (*band) {
      StretchSequence n;
      if (!env_path.empty()) {
        std::ifstream in(env_path);
        if (!in) throw std::runtime_error("cannot open " + env_path);
        n = read_environment(in);
      } else {
        Stream st(g.seed, Purpose::audit);
        n = sample_geometric_stretches(band_q, centered_window(g.window), st);
      }
      emit(g.out, [&](std::ostream& os) { band_report(os, n, mp, max_steps); });
    } else if (*snap) {
      auto s = snapshot(sp, g.seed, snap_t, g.window, snap_trial);
      emit(g.out, [&](std::ostream& os) {
        if (format == "pgm") write_raster_pgm(os, s.sim.raster, s.window);
        else write_raster_text(os, s.sim.raster, s.window);
      });
    } else if (*audit) {
      if (list) {
        for (const auto& [name, fn] : audit_suites()) std::cout << name << "\n";
        return 0;
      }
      if (suites.empty() || (suites.size() == 1 && suites[0] == "all")) {
        suites.clear();
        for (const auto& [name, fn] : audit_suites()) suites.push_back(name);
      }
      AuditOptions o{budget, app.count("--seed") ? g.seed : AuditOptions{}.seed, g.jobs};
      bool ok = true;
      std::string text;
      for (const auto& name : suites) {
        auto r = run_audit(name, o);
        ok = ok && r.passed;
        text += r.json() + "\n";
        std::cerr << (r.passed ? "PASS " : "FAIL ") << name << "\n";
      }
      emit(g.out, [&](std::ostream& os) { os << text; });
      return ok ? 0 : 2;
    } else if (*dump) {
      auto env = exercise_environment(audits::exercise_layout());
      BoxHierarchy h(env.time, env.space, audits::exercise_box_params(), audits::exercise_layout().levels);
      emit(g.out, [&](std::ostream& os) {
        if (no_goodness) {
          write_hierarchy(os, h);
          return;
        }
        Configuration cfg(audits::exercise_env_params(), env.nt, env.nx,
                          derive_key(g.seed, Purpose::fixture, {static_cast<std::int64_t>(realization)}));
        GoodnessEvaluator ev(h, cfg);
        write_hierarchy(os, h, &ev);
      });
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
