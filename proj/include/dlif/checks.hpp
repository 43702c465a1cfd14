#pragma once

#include <string>
#include <vector>

#include "dlif/gradcheck.hpp"

namespace dlif {

struct GradientSuiteResult {
  std::vector<GradCheckReport> reports;
  std::vector<std::string> names;
  bool passed = true;

  std::string to_string() const;
};

// Finite-difference verification of every primitive and every objective term
// (orthogonality, both ambiguity targets, both contrast forms, margin
// softmax, identity cross-entropy, and the two composite objectives) on
// randomized inputs.
GradientSuiteResult run_gradient_suite(uint64_t seed, double step = 1e-4, double tol = 1e-3);

}  // namespace dlif
