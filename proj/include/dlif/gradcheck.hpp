#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dlif/tensor.hpp"

namespace dlif {

// Central-difference verification of the analytic gradients produced by
// backward(). The callable must rebuild the graph from the current parameter
// values and return a scalar loss; it is evaluated repeatedly with perturbed
// parameter entries.
using LossFn = std::function<Tensor()>;

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int checked = 0;
  int failures = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double step = 0.0;
  double tol = 0.0;
  bool passed = true;

  std::string to_string() const;
};

// Compares analytic gradients against (f(p+step)-f(p-step))/(2*step) for each
// element of each parameter; tensors larger than max_elements_per_param get a
// random subsample. Relative error uses max(|analytic|,|numeric|,1e-8) in the
// denominator. A failing check is reported, never thrown.
GradCheckReport finite_diff_check(const LossFn& f, const std::vector<Tensor>& params,
                                  const std::vector<std::string>& names, double step, double tol,
                                  std::mt19937_64& rng, int max_elements_per_param = 1000);

}  // namespace dlif
