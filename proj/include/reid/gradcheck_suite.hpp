#pragma once

#include <functional>
#include <string>
#include <vector>

#include "reid/grad_check.hpp"

namespace reid {

struct GradCheckCase {
  std::string name;
  double tolerance;
  std::function<GradCheckReport()> run;  // deterministic (fixed seeds)
};

// Central-difference checks for every differentiable block: primitive ops,
// each loss, spatial attention, BIN, the channel gate, SRA, and the full
// model (sampled coordinates). Backs the `gradcheck` CLI command and the
// acceptance gradient criterion.
const std::vector<GradCheckCase>& gradcheck_suite();

struct GradCheckOutcome {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Runs all cases (or only `only`, when non-empty). Throws ContractError for
// an unknown name.
std::vector<GradCheckOutcome> run_gradcheck_suite(const std::string& only = "");

}  // namespace reid
