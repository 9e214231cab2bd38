#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace latgeo {

struct GradCheckEntry {
  std::string name;    // op or stage under check
  int cases = 0;       // seeded cases run
  double worst = 0.0;  // max relative error vs central finite differences
};

// Gradient self-check: central finite differences against the analytic
// backward pass, over every differentiable op and an end-to-end micro model
// driven through the supervised loss. 100 seeded cases total.
struct GradCheckReport {
  std::vector<GradCheckEntry> checks;
  int total_cases = 0;
  double max_err = 0.0;
  bool passed(double limit = 1e-4) const { return max_err < limit; }
};

GradCheckReport run_gradient_suite(std::uint64_t seed = 0);

}  // namespace latgeo
