#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tsvr {

struct GradcheckOptions {
  std::vector<std::uint64_t> seeds;  // empty means 0..19
  double step = 1e-5;
  double tolerance = 1e-4;
  // Negative control: perturb the analytic gradient of this component.
  std::string corrupt_component;
};

struct ComponentResult {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checks = 0;      // tensors compared across all seeds
  std::size_t kink_retries = 0;  // entries re-differenced because a step crossed a ReLU kink
  bool passed = false;
};

struct GradcheckReport {
  std::vector<ComponentResult> components;
  bool passed = false;

  std::vector<std::string> failing() const;
};

// Names in the order they are run.
std::vector<std::string> gradcheck_components();

// Central differences against every analytic backward pass. Each component
// is checked through a random linear functional of its output so that the
// whole Jacobian contributes. Error per tensor: ||a - n|| / max(||a||, ||n||).
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

std::string format_gradcheck_report(const GradcheckReport& report);

}  // namespace tsvr
