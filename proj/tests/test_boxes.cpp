#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "lorac/boxes.hpp"

using namespace lorac;

namespace {

const EnvironmentParams kOpen{0.4, 0.4, 1.0, 1.1};

struct Small {
  ExerciseEnvironment env = exercise_environment(ExerciseLayout{2, 8, 12, 4});
  BoxHierarchy h{env.time, env.space, BoxParams::exercise(3, 2, 2), 2};
  Configuration cfg(std::uint64_t key) const { return Configuration(kOpen, env.nt, env.nx, key); }
};

// p = 1 realization of the small layout whose level-2 box has no bad object.
constexpr std::uint64_t kAllGood = 1;

StretchSequence ones_with(std::int64_t lo, std::int64_t hi, std::map<std::int64_t, std::uint64_t> set) {
  std::vector<ExtNat> v(static_cast<std::size_t>(hi - lo + 1), ExtNat(1));
  for (auto [i, n] : set) v[static_cast<std::size_t>(i - lo)] = ExtNat(n);
  return StretchSequence(Window{lo, hi}, std::move(v));
}

}  // namespace

TEST(Kappas, TheoremValues) {
  auto k = theorem_kappas(240000, 792);
  EXPECT_EQ(k.kappa_ver, 64);
  EXPECT_EQ(k.kappa_hor, 986);
  EXPECT_EQ(min_s_t_for_kappa_hor(792), 228169u);
  EXPECT_EQ(theorem_kappas(228169, 792).kappa_hor, 1);
  EXPECT_EQ(theorem_kappas(228168, 792).kappa_hor, 0);
  EXPECT_EQ(ceil12(1), 1);
  EXPECT_EQ(ceil12(24), 2);
  EXPECT_EQ(ceil12(25), 3);
}

TEST(Kappas, ParamValidation) {
  auto p = BoxParams::theorem(240000, 792);
  EXPECT_EQ(p.i_offset, 12 * 792 + 2);
  EXPECT_EQ(p.io_last() - p.io_first(), 986 + 3);
  EXPECT_THROW(BoxParams::theorem(17000, 792), std::invalid_argument);
  EXPECT_THROW(BoxParams::theorem(240000, 700), std::invalid_argument);
  EXPECT_THROW(BoxParams::exercise(0, 3, 7), std::invalid_argument);
  EXPECT_THROW(BoxParams::exercise(3, 3, 0), std::invalid_argument);
  auto bad = p;
  bad.kappa_hor = 5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(StripBound, FormulaAndMonotonicity) {
  EXPECT_DOUBLE_EQ(strip_cross_failure_bound(1, 3.0, 792, 986), std::exp(-986.0 / std::pow(793.0, 3)));
  EXPECT_NEAR(strip_cross_failure_bound(1, 3.0, 792, 986), 1.0 - 1.98e-6, 1e-8);
  EXPECT_LT(strip_cross_failure_bound(2, 1.1, 32, 400), strip_cross_failure_bound(2, 1.1, 32, 300));
  EXPECT_GT(strip_cross_failure_bound(2, 1.5, 32, 400), strip_cross_failure_bound(2, 1.1, 32, 400));
  EXPECT_THROW(strip_cross_failure_bound(1, 3.0, 792, 0), std::invalid_argument);
}

TEST(Recursion, Examples) {
  auto r = multiscale_recursion_check_bad(2, 0.1, 1e-6, 5);
  EXPECT_TRUE(r.ok()) << r.reason;
  EXPECT_LE(1.0 - r.p_next, 1e-7);
  EXPECT_NEAR(r.bad_next, 1e-12, 1e-18);
  auto full = multiscale_recursion_check(2, 0.1, 1.0, 5);
  EXPECT_TRUE(full.ok());
  EXPECT_EQ(full.p_next, 1.0);
  auto pre = multiscale_recursion_check(2, 0.1, 1.0 - 1e-5, 5);
  EXPECT_FALSE(pre.preconditions);
  EXPECT_FALSE(pre.reason.empty());
  EXPECT_FALSE(multiscale_recursion_check(10, 0.5, 1.0, 1).preconditions);
  EXPECT_TRUE(multiscale_recursion_check(2, 0.1, 1.0 - 1e-7, 5).ok());
  EXPECT_THROW(multiscale_recursion_check(2, 1.0, 1.0, 5), std::invalid_argument);
  EXPECT_THROW(multiscale_recursion_check(2, 0.1, 1.5, 5), std::invalid_argument);
}

TEST(UnionBound, Examples) {
  auto u = union_lower_bound({0.5}, 1.0);
  EXPECT_DOUBLE_EQ(u.lhs, 0.5);
  EXPECT_NEAR(u.rhs, 0.5 * (1.0 - std::exp(-1.0)), 1e-15);
  EXPECT_TRUE(u.holds());
  auto tiny = union_lower_bound({1e-12, 2e-12}, 2.0);
  EXPECT_NEAR(tiny.rhs / tiny.lhs, (1.0 - std::exp(-2.0)) / 2.0, 1e-6);
  Stream st(3, Purpose::fixture);
  for (int k = 0; k < 2000; ++k) {
    std::vector<double> ps(1 + static_cast<std::size_t>(st.uniform() * 20));
    for (auto& p : ps) p = st.uniform() * 0.5;
    EXPECT_TRUE(union_lower_bound(ps, 0.01 + st.uniform() * 5).holds());
  }
  EXPECT_THROW(union_lower_bound({0.0}, 1.0), std::invalid_argument);
  EXPECT_THROW(union_lower_bound({0.5}, 0.0), std::invalid_argument);
}

TEST(Hierarchy, DefaultExerciseStructure) {
  auto env = exercise_environment(ExerciseLayout{3, 16, 20, 5});
  EXPECT_EQ(env.nt.window().size(), 6803u);
  EXPECT_EQ(env.nx.window().size(), 28u);
  BoxHierarchy h(env.time, env.space, BoxParams::exercise(3, 3, 7), 3);
  EXPECT_EQ(h.box_count(1), 10000u);
  EXPECT_EQ(h.box_count(2), 100u);
  EXPECT_EQ(h.box_count(3), 1u);
  EXPECT_TRUE(h.audit_failures().empty());
  BoxRef top{3, 0, 0};
  EXPECT_EQ(h.l_t(top), 20u);
  EXPECT_EQ(h.l_x(top), 5u);
  EXPECT_EQ(h.object_count(top), 20u * 5 + 19 * 5 + 20 * 4);
  EXPECT_THROW(h.level(4), std::out_of_range);
}

TEST(Hierarchy, NestingAndSeparation) {
  auto env = exercise_environment(ExerciseLayout{3, 16, 20, 5});
  BoxHierarchy h(env.time, env.space, BoxParams::exercise(3, 3, 7), 3);
  for (std::uint64_t n = 1; n <= 3; ++n) {
    const auto& L = h.level(n);
    for (std::size_t k = 0; k + 1 < L.rows.size(); ++k) EXPECT_LT(L.rows[k].hi + 1, L.rows[k + 1].lo);
    for (std::size_t k = 0; k + 1 < L.cols.size(); ++k) EXPECT_LT(L.cols[k].hi, L.cols[k + 1].lo);
    if (n == 3) continue;
    for (std::size_t r = 0; r < L.rows.size(); r += 7)
      for (std::size_t c = 0; c < L.cols.size(); ++c) {
        BoxRef b{n, r, c};
        auto par = h.parent(b);
        ASSERT_TRUE(par);
        auto in = h.box(b), out = h.box(*par);
        EXPECT_TRUE(out.t_lo <= in.t_lo && in.t_hi <= out.t_hi && out.x_lo <= in.x_lo && in.x_hi <= out.x_hi);
      }
  }
  EXPECT_FALSE(h.parent(BoxRef{3, 0, 0}));
  EXPECT_THROW(h.child(BoxRef{1, 0, 0}, 0, 0), std::invalid_argument);
  EXPECT_THROW(h.child(BoxRef{2, 0, 0}, 20, 0), std::out_of_range);
  BoxRef a{1, 3, 2};
  auto s = h.strip_below(a);
  EXPECT_EQ(s.t_lo, h.box(a).t_hi + 1);
  EXPECT_EQ(s.t_hi, h.box(BoxRef{1, 4, 2}).t_lo - 1);
  auto g = h.gap_right_of(a);
  EXPECT_EQ(g.x_lo, h.box(a).x_hi);
  EXPECT_EQ(g.x_hi, h.box(BoxRef{1, 3, 3}).x_lo - 1);
}

TEST(Hierarchy, RejectsUnusablePartitions) {
  auto env = exercise_environment(ExerciseLayout{2, 8, 12, 4});
  EXPECT_THROW(BoxHierarchy(env.time, env.space, BoxParams::exercise(3, 2, 2), 3), std::invalid_argument);
  EXPECT_THROW(BoxHierarchy(env.time, env.space, BoxParams::exercise(3, 2, 2), 0), std::invalid_argument);
  auto partial = init_bands(env.nt, MergeParams{});
  EXPECT_THROW(BoxHierarchy(partial, env.space, BoxParams::exercise(3, 2, 2), 1), std::invalid_argument);
}

TEST(Goodness, LevelOneIsAnOpenColumn) {
  Small s;
  Configuration cfg(EnvironmentParams{0.4, 0.4, 0.95, 1.1}, s.env.nt, s.env.nx, 42);
  GoodnessEvaluator ev(s.h, cfg);
  std::size_t bad = 0;
  const auto& L = s.h.level(1);
  for (std::size_t r = 0; r < L.rows.size(); ++r)
    for (std::size_t c = 0; c < L.cols.size(); ++c) {
      auto reg = s.h.box(BoxRef{1, r, c});
      bool open = true;
      for (std::int64_t t = reg.t_lo; t <= reg.t_hi; ++t) open = open && cfg.vertex_open(t, reg.x_lo);
      EXPECT_EQ(ev.box_good(BoxRef{1, r, c}), open);
      bad += !open;
    }
  EXPECT_GT(bad, 0u);
}

TEST(Goodness, LevelOneSetsAsPrinted) {
  Small s;
  auto cfg = s.cfg(kAllGood);
  GoodnessEvaluator ev(s.h, cfg);
  BoxRef b{1, 2, 1};
  auto r = s.h.box(b);
  const auto& io = ev.io(b);
  EXPECT_EQ(io.in_ver, (std::vector<Vertex>{{r.t_lo, r.x_lo}}));
  EXPECT_EQ(io.out_ver, (std::vector<Vertex>{{r.t_hi, r.x_lo}}));
  ASSERT_EQ(io.in_hor.size(), static_cast<std::size_t>(r.t_hi - r.t_lo));
  EXPECT_EQ(io.in_hor.front(), (Vertex{r.t_lo + 1, r.x_lo}));
  EXPECT_EQ(io.out_hor.back(), (Vertex{r.t_hi - 1, r.x_lo}));
  EXPECT_EQ(horizontal_connectors(ev, b, BoxRef{1, 2, 2}), static_cast<std::size_t>(r.t_hi - r.t_lo));
  EXPECT_THROW(horizontal_connectors(ev, b, BoxRef{1, 3, 2}), std::invalid_argument);
}

TEST(Goodness, AllGoodRealization) {
  Small s;
  auto cfg = s.cfg(kAllGood);
  GoodnessEvaluator ev(s.h, cfg);
  BoxRef top{2, 0, 0};
  EXPECT_EQ(ev.bad_objects(top), 0u);
  EXPECT_TRUE(ev.box_good(top));
  EXPECT_TRUE(check_inside_connectivity(ev, top).ok());
  auto rb = check_reachable_boxes(ev, top);
  EXPECT_GT(rb.pairs, 0u);
  EXPECT_TRUE(rb.ok());
  const auto& io = ev.io(top);
  EXPECT_EQ(io.in_ver.size(), 4u);
  EXPECT_EQ(io.out_ver.size(), 4u);
  EXPECT_FALSE(io.in_hor.empty());
  EXPECT_FALSE(io.out_hor.empty());
  for (auto* v : {&io.in_hor, &io.out_hor}) {
    auto r = s.h.box(top);
    for (const auto& w : *v) EXPECT_TRUE(on_boundary(r, w));
  }
}

TEST(Goodness, LargeAlphaIsolatesColumns) {
  Small s;
  Configuration cfg(EnvironmentParams{0.4, 0.4, 1.0, 60.0}, s.env.nt, s.env.nx, 5);
  GoodnessEvaluator ev(s.h, cfg);
  EXPECT_TRUE(ev.box_good(BoxRef{1, 0, 0}));
  EXPECT_TRUE(ev.strip_good(BoxRef{1, 0, 0}));
  EXPECT_FALSE(ev.gap_good(BoxRef{1, 0, 0}));
  EXPECT_FALSE(ev.box_good(BoxRef{2, 0, 0}));
}

TEST(Goodness, OneBadSubBoxIsTolerated) {
  Small s;
  auto cfg = s.cfg(kAllGood);
  auto r = s.h.box(BoxRef{1, 5, 1});
  cfg.force_closed(r.t_lo + 3, r.x_lo);
  GoodnessEvaluator ev(s.h, cfg);
  EXPECT_FALSE(ev.box_good(BoxRef{1, 5, 1}));
  EXPECT_EQ(ev.bad_objects(BoxRef{2, 0, 0}), 1u);
  EXPECT_TRUE(ev.box_good(BoxRef{2, 0, 0}));
  EXPECT_TRUE(check_inside_connectivity(ev, BoxRef{2, 0, 0}).ok());
  EXPECT_TRUE(check_reachable_boxes(ev, BoxRef{2, 0, 0}).ok());

  auto cfg2 = s.cfg(kAllGood);
  cfg2.force_closed(r.t_lo, r.x_lo);
  auto r2 = s.h.box(BoxRef{1, 9, 3});
  cfg2.force_closed(r2.t_hi, r2.x_lo);
  GoodnessEvaluator ev2(s.h, cfg2);
  EXPECT_EQ(ev2.bad_objects(BoxRef{2, 0, 0}), 2u);
  EXPECT_FALSE(ev2.box_good(BoxRef{2, 0, 0}));
  EXPECT_TRUE(ev2.io(BoxRef{2, 0, 0}).in_ver.empty());
}

TEST(Goodness, BadTopRowDropsVerticalInputs) {
  Small s;
  auto cfg = s.cfg(kAllGood);
  auto r = s.h.box(BoxRef{1, 0, 2});
  cfg.force_closed(r.t_lo, r.x_lo);
  GoodnessEvaluator ev(s.h, cfg);
  const auto& io = ev.io(BoxRef{2, 0, 0});
  EXPECT_EQ(io.in_ver.size(), 3u);
  for (const auto& v : io.in_ver) EXPECT_NE(v.x, r.x_lo);
  EXPECT_EQ(io.out_ver.size(), 4u);
}

// One bad sub-box in the first column at row min(I) + 1.
TEST(Goodness, IoScenario) {
  Small s;
  const auto& P = s.h.params();
  const auto bad_row = static_cast<std::size_t>(P.io_first() + 1 - 1);
  BoxRef top{2, 0, 0};
  auto clean_cfg = s.cfg(kAllGood);
  GoodnessEvaluator clean(s.h, clean_cfg);
  auto cfg = s.cfg(kAllGood);
  auto r = s.h.box(s.h.child(top, bad_row, 0));
  cfg.force_closed(r.t_lo + 1, r.x_lo);
  GoodnessEvaluator ev(s.h, cfg);
  ASSERT_TRUE(ev.box_good(top));
  auto rows_of = [&](const std::vector<Vertex>& vs) {
    std::set<std::size_t> rows;
    for (const auto& v : vs)
      for (std::size_t i = 0; i < s.h.l_t(top); ++i) {
        auto c = s.h.box(s.h.child(top, i, 0));
        if (v.x == c.x_lo && v.t >= c.t_lo && v.t <= c.t_hi) rows.insert(i);
      }
    return rows;
  };
  auto before = rows_of(clean.io(top).out_hor), after = rows_of(ev.io(top).out_hor);
  EXPECT_TRUE(before.count(bad_row) && before.count(bad_row + 1));
  EXPECT_FALSE(after.count(bad_row));
  EXPECT_FALSE(after.count(bad_row + 1));
  EXPECT_TRUE(after.count(bad_row - 1));
  EXPECT_TRUE(after.count(bad_row + 2));
  auto in_after = rows_of(ev.io(top).in_hor);
  EXPECT_FALSE(in_after.count(bad_row));
  EXPECT_FALSE(in_after.count(bad_row - 1));
  EXPECT_TRUE(in_after.count(bad_row + 1));
}

TEST(Trees, LevelOneIsSingleton) {
  Small s;
  auto cfg = s.cfg(kAllGood);
  GoodnessEvaluator ev(s.h, cfg);
  BoxRef a{1, 4, 2}, b{1, 5, 2};
  auto t = extract_tree(ev, a, b);
  EXPECT_EQ(t.vertices, (std::vector<Vertex>{{s.h.box(a).t_hi, s.h.box(a).x_lo}}));
  EXPECT_TRUE(check_tree(ev, a, b, t).ok());
  EXPECT_THROW(extract_tree(ev, a, BoxRef{1, 6, 2}), std::invalid_argument);
}

TEST(Trees, ExerciseLevelTwoAndConnectors) {
  auto env = exercise_environment(ExerciseLayout{3, 16, 20, 5});
  BoxHierarchy h(env.time, env.space, BoxParams::exercise(3, 3, 7), 3);
  std::size_t trees = 0, pairs = 0;
  for (std::uint64_t key = 0; key < 3; ++key) {
    Configuration cfg(EnvironmentParams{0.4, 0.4, 0.9999, 1.1}, env.nt, env.nx, key);
    GoodnessEvaluator ev(h, cfg);
    for (std::size_t r = 0; r + 1 < 20; ++r)
      for (std::size_t c = 0; c < 5; ++c) {
        BoxRef a{2, r, c}, b{2, r + 1, c};
        if (ev.box_good(a) && ev.box_good(b)) {
          auto t = extract_tree(ev, a, b);
          EXPECT_EQ(t.vertices.size(), 3u);
          EXPECT_TRUE(check_tree(ev, a, b, t).ok());
          ++trees;
        }
        BoxRef d{2, r, c + 1};
        if (c + 1 < 5 && ev.box_good(a) && ev.box_good(d)) {
          EXPECT_GE(horizontal_connectors(ev, a, d), 9u);
          ++pairs;
        }
      }
  }
  EXPECT_GT(trees, 100u);
  EXPECT_GT(pairs, 100u);
}

TEST(StripDecomposition, QThreeFixture) {
  std::map<std::int64_t, std::uint64_t> set{{0, 5}, {2706, 5}, {1353, 3}};
  for (std::int64_t base : {1, 1354})
    for (int k = 1; k < 33; ++k) set[base + k * 41 - 1] = 2;
  auto p = run_to_fixpoint(ones_with(-1, 2707, set), MergeParams{});
  auto id = p.current()[p.position_of(0)];
  ASSERT_EQ(p.node(id).label, ExtNat(10));
  auto d = decompose_strip(p, id, 3, 9);
  EXPECT_EQ(d.diag.q, 3u);
  EXPECT_EQ(d.diag.m, 5u);
  EXPECT_EQ(d.diag.r, 5u);
  EXPECT_EQ(d.diag.flat_n, 5u);
  EXPECT_FALSE(d.base_case);
  ASSERT_EQ(d.middle_rows.size(), 2u);
  ASSERT_EQ(d.separators.size(), 1u);
  EXPECT_EQ(d.separators[0].t_lo, 1353);
  EXPECT_EQ(d.top.t_hi, 0);
  EXPECT_EQ(d.bottom.t_lo, 2706);
  EXPECT_EQ(d.middle_rows[0].x_lo, 3);
  EXPECT_EQ(d.middle_rows[0].x_hi, 9);
  EXPECT_EQ(d.height(), p.node(id).hi - p.node(id).lo + 1);
  EXPECT_THROW(decompose_strip(p, p.current()[p.position_of(-1)], 0, 1), std::invalid_argument);
}

TEST(StripDecomposition, SimpleBandIsBaseCase) {
  auto p = run_to_fixpoint(ones_with(-1, 41, {{0, 3}, {40, 3}}), MergeParams{});
  auto id = p.current()[p.position_of(0)];
  ASSERT_FALSE(p.node(id).leaf());
  auto d = decompose_strip(p, id, 0, 0);
  EXPECT_TRUE(d.base_case);
  EXPECT_TRUE(d.separators.empty());
  EXPECT_EQ(d.middle_rows.size(), 1u);
  EXPECT_EQ(d.height(), p.node(id).hi - p.node(id).lo + 1);
}

TEST(Dump, Format) {
  Small s;
  std::ostringstream plain, graded;
  write_hierarchy(plain, s.h);
  auto cfg = s.cfg(kAllGood);
  GoodnessEvaluator ev(s.h, cfg);
  write_hierarchy(graded, s.h, &ev);
  std::istringstream in(plain.str());
  std::string line;
  std::size_t boxes = 0, strips = 0, gaps = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 6) << line;
    EXPECT_EQ(line.back(), '-');
    boxes += line.find("\tbox\t") != std::string::npos;
    strips += line.find("\tstrip\t") != std::string::npos;
    gaps += line.find("\tgap\t") != std::string::npos;
  }
  EXPECT_EQ(boxes, 48u + 1u);
  EXPECT_EQ(strips, 11u * 4u);
  EXPECT_EQ(gaps, 12u * 3u);
  EXPECT_EQ(graded.str().find("\tno\n"), std::string::npos);
  EXPECT_EQ(graded.str().substr(0, 2), "1\t");
}
