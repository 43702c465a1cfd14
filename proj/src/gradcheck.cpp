#include "dlif/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dlif {

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  os << "finite_diff_check step=" << step << " tol=" << tol << "\n";
  for (const auto& e : entries) {
    os << "  " << (e.failures ? "FAIL" : "ok  ") << " " << e.name << " max_rel_err=" << e.max_rel_err
       << " checked=" << e.checked << "\n";
  }
  os << (passed ? "PASSED" : "FAILED") << "\n";
  return os.str();
}

GradCheckReport finite_diff_check(const LossFn& f, const std::vector<Tensor>& params,
                                  const std::vector<std::string>& names, double step, double tol,
                                  std::mt19937_64& rng, int max_elements_per_param) {
  GradCheckReport report;
  report.step = step;
  report.tol = tol;

  zero_all_grads(params);
  Tensor loss = f();
  backward(loss);

  for (size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& p = params[pi];
    GradCheckEntry entry;
    entry.name = pi < names.size() ? names[pi] : "param" + std::to_string(pi);

    std::vector<int64_t> idx(static_cast<size_t>(p->size()));
    std::iota(idx.begin(), idx.end(), 0);
    if (p->size() > max_elements_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<size_t>(max_elements_per_param));
    }

    p->ensure_grad();
    for (int64_t i : idx) {
      const double saved = p->data[i];
      p->data[i] = saved + step;
      const double up = f()->scalar();
      p->data[i] = saved - step;
      const double down = f()->scalar();
      p->data[i] = saved;

      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad[i];
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(analytic - numeric) / denom;
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      entry.checked++;
      if (rel > tol) entry.failures++;
    }
    if (entry.failures > 0) report.passed = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dlif
