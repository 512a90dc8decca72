#pragma once

#include "cnp3o/config.hpp"

#include <string>
#include <vector>

namespace cnp3o {

/// One analytic-vs-central-difference comparison.
struct GradCheckStage {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckStage> stages;

  bool all_passed() const;
  /// Name of the first failing stage, empty when everything passed.
  std::string first_failure() const;
};

/// Names of every stage in execution order; each appears exactly once.
std::vector<std::string> gradient_check_stage_names();

/// Runs the full finite-difference suite on small problem instances
/// derived from the run configuration (basis family, prior mode,
/// environment constraint suite). The end-to-end stages use a reduced
/// two-layer, eight-unit policy so the sweep over every parameter stays
/// fast. `inject_fault` names one stage whose analytic result is
/// deliberately corrupted before the comparison, proving the check
/// catches a wrong gradient; an unknown name throws.
GradCheckReport run_gradient_checks(const RunConfig& cfg,
                                    const std::string& inject_fault = "");

}  // namespace cnp3o
