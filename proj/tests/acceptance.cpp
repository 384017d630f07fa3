#include <cstdio>
#include <string>
#include <vector>

#include "lorac/lorac.hpp"

using namespace lorac;

namespace {

struct Criterion {
  int id;
  std::string name;
  std::vector<std::string> suites;
  double time_limit = 0.0;  // seconds, 0 = none
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "compositions identity", {"compositions"}, 1.0},
      {2, "band-size audit", {"band-size-limit"}, 60.0},
      {3, "neighbour spacing", {"neighbour-spacing"}},
      {4, "regularization round-trip", {"regularization"}},
      {5, "segment counts", {"segment-counts"}},
      {6, "q-estimate audit", {"q-estimates"}},
      {7, "label-decay statistics", {"label-decay"}},
      {8, "extinction bound", {"extinction"}, 120.0},
      {9, "monotone coupling", {"coupling-monotone"}},
      {10, "reachability oracle and bounds", {"reachability", "union-bound", "recursion"}},
      {11, "exercise-mode box connectivity", {"box-connectivity"}},
      {12, "survival smoke test", {"survival-smoke"}},
  };
  AuditOptions opt;
  int failed = 0;
  for (const auto& c : criteria) {
    bool pass = true;
    double seconds = 0.0;
    std::string note;
    for (const auto& s : c.suites) {
      auto r = run_audit(s, opt);
      seconds += r.seconds;
      pass = pass && r.passed;
      note += " " + s + ":checked=" + std::to_string(r.checked) + ",violations=" + std::to_string(r.violations);
      if (!r.passed && !r.counterexamples.empty()) note += ",first=\"" + r.counterexamples.front() + "\"";
    }
    if (c.time_limit > 0.0 && seconds > c.time_limit) {
      pass = false;
      note += " time limit exceeded";
    }
    failed += !pass;
    std::printf("%s %2d %s (%.2fs)%s\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), seconds, note.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
