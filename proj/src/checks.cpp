#include "dlif/checks.hpp"

#include <cmath>
#include <sstream>

#include "dlif/losses.hpp"

namespace dlif {

std::string GradientSuiteResult::to_string() const {
  std::ostringstream os;
  for (size_t i = 0; i < reports.size(); ++i) {
    double worst = 0.0;
    int failures = 0;
    for (const auto& e : reports[i].entries) {
      worst = std::max(worst, e.max_rel_err);
      failures += e.failures;
    }
    os << (failures ? "FAIL " : "ok   ") << names[i] << " max_rel_err=" << worst << "\n";
  }
  os << (passed ? "gradient suite PASSED" : "gradient suite FAILED") << "\n";
  return os.str();
}

namespace {

Tensor random_leaf(Shape shape, std::mt19937_64& rng, double lo, double hi, bool requires_grad = true) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> data(static_cast<size_t>(numel(shape)));
  for (double& v : data) v = d(rng);
  return make_tensor(std::move(shape), std::move(data), requires_grad);
}

// Inputs away from the relu kink.
Tensor random_leaf_off_kink(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.02, 1.0);
  std::uniform_int_distribution<int> sign(0, 1);
  std::vector<double> data(static_cast<size_t>(numel(shape)));
  for (double& v : data) v = d(rng) * (sign(rng) ? 1.0 : -1.0);
  return make_tensor(std::move(shape), std::move(data), true);
}

}  // namespace

GradientSuiteResult run_gradient_suite(uint64_t seed, double step, double tol) {
  GradientSuiteResult suite;
  std::mt19937_64 rng(seed);

  auto run = [&](const std::string& name, const LossFn& f, const std::vector<Tensor>& params) {
    std::vector<std::string> pnames;
    for (size_t i = 0; i < params.size(); ++i) pnames.push_back(name + "/p" + std::to_string(i));
    GradCheckReport rep = finite_diff_check(f, params, pnames, step, tol, rng);
    suite.passed = suite.passed && rep.passed;
    suite.names.push_back(name);
    suite.reports.push_back(std::move(rep));
  };

  // ---- primitives ----
  {
    Tensor x = random_leaf({2, 3, 8, 8}, rng, -1, 1);
    Tensor k = random_leaf({4, 3, 3, 3}, rng, -1, 1);
    Tensor b = random_leaf({4}, rng, -0.5, 0.5);
    Tensor r = random_leaf({2, 4, 4, 4}, rng, -1, 1, false);
    run("conv2d(stride2,pad1)", [&] { return sum(mul(conv2d(x, k, b, 2, 1), r)); }, {x, k, b});
    Tensor r1 = random_leaf({2, 4, 8, 8}, rng, -1, 1, false);
    run("conv2d(stride1,pad1)", [&] { return sum(mul(conv2d(x, k, b, 1, 1), r1)); }, {x, k, b});
  }
  {
    Tensor x = random_leaf({4, 6}, rng, -1, 1);
    Tensor w = random_leaf({5, 6}, rng, -1, 1);
    Tensor b = random_leaf({5}, rng, -0.5, 0.5);
    Tensor r = random_leaf({4, 5}, rng, -1, 1, false);
    run("linear", [&] { return sum(mul(linear(x, w, b), r)); }, {x, w, b});
  }
  // fixed covectors so every loss closure stays a pure function of its params
  {
    Tensor x = random_leaf_off_kink({3, 7}, rng);
    Tensor r = random_leaf({3, 7}, rng, -1, 1, false);
    run("relu", [&] { return sum(mul(relu(x), r)); }, {x});
  }
  {
    Tensor x = random_leaf({3, 7}, rng, -2, 2);
    Tensor r = random_leaf({3, 7}, rng, -1, 1, false);
    run("sigmoid", [&] { return sum(mul(sigmoid(x), r)); }, {x});
  }
  {
    Tensor x = random_leaf({4, 5}, rng, -2, 2);
    Tensor r = random_leaf({4, 5}, rng, -1, 1, false);
    run("softmax", [&] { return sum(mul(softmax_rows(x), r)); }, {x});
  }
  {
    Tensor x = random_leaf({4, 6}, rng, 0.2, 1.0);
    Tensor r = random_leaf({4, 6}, rng, -1, 1, false);
    run("l2_normalize", [&] { return sum(mul(l2_normalize(x, 1), r)); }, {x});
  }
  {
    Tensor x = random_leaf({2, 3, 5, 5}, rng, -1, 1);
    Tensor r = random_leaf({2, 3}, rng, -1, 1, false);
    run("channel_mean", [&] { return sum(mul(channel_mean(x), r)); }, {x});
    run("channel_std", [&] { return sum(mul(channel_std(x), r)); }, {x});
    run("global_avg_pool", [&] { return sum(mul(global_avg_pool(x), r)); }, {x});
  }
  {
    Tensor a = random_leaf({3, 4}, rng, -1, 1);
    Tensor b = random_leaf({3, 2}, rng, -1, 1);
    Tensor c = random_leaf({2, 4}, rng, -1, 1);
    Tensor r1 = random_leaf({3, 6}, rng, -1, 1, false);
    Tensor r0 = random_leaf({5, 4}, rng, -1, 1, false);
    run("concat(axis1)", [&] { return sum(mul(concat({a, b}, 1), r1)); }, {a, b});
    run("concat(axis0)", [&] { return sum(mul(concat({a, c}, 0), r0)); }, {a, c});
  }
  {
    Tensor a = random_leaf({3, 4}, rng, -1, 1);
    Tensor b = random_leaf({3, 4}, rng, -1, 1);
    Tensor r = random_leaf({3, 4}, rng, -1, 1, false);
    Tensor rt = random_leaf({4, 3}, rng, -1, 1, false);
    Tensor rs = random_leaf({3, 2}, rng, -1, 1, false);
    run("add", [&] { return sum(mul(add(a, b), r)); }, {a, b});
    run("mul", [&] { return sum(mul(mul(a, b), r)); }, {a, b});
    run("scale", [&] { return sum(mul(scale(a, -0.7), r)); }, {a});
    run("square", [&] { return sum(mul(square(a), r)); }, {a});
    run("sum", [&] { return sum(a); }, {a});
    run("mean", [&] { return mean(a); }, {a});
    run("transpose", [&] { return sum(mul(transpose(a), rt)); }, {a});
    run("slice", [&] { return sum(mul(slice(a, 1, 1, 3), rs)); }, {a});
    run("exp", [&] { return sum(mul(exp(a), r)); }, {a});
  }
  {
    Tensor a = random_leaf({3, 4}, rng, 0.5, 2.0);
    Tensor r = random_leaf({3, 4}, rng, -1, 1, false);
    run("log", [&] { return sum(mul(log(a), r)); }, {a});
  }
  {
    Tensor a = random_leaf({3, 4}, rng, -1, 1);
    Tensor b = random_leaf({4, 5}, rng, -1, 1);
    Tensor r = random_leaf({3, 5}, rng, -1, 1, false);
    run("matmul", [&] { return sum(mul(matmul(a, b), r)); }, {a, b});
  }
  {
    Tensor a = random_leaf({2, 3}, rng, -1, 1);
    Tensor r = random_leaf({2, 3, 4, 5}, rng, -1, 1, false);
    run("broadcast_channel", [&] { return sum(mul(broadcast_channel(a, 4, 5), r)); }, {a});
  }

  // ---- objective terms on feature-level graphs ----
  const int b = 4, n = 8, n_id = 5;
  Tensor f_u = random_leaf({b, n}, rng, -1, 1);
  Tensor f_v = random_leaf({b, n}, rng, -1, 1);
  Tensor w_c = random_leaf({2, n}, rng, -1, 1);
  Tensor w_d = random_leaf({n_id, n}, rng, -1, 1);
  std::vector<int> liveness{1, 1, 0, 0};
  std::vector<int> identity{0, 1, 0, 2};
  LossWeights lw;

  auto cls_cosines = [&](const Tensor& feats, const Tensor& w) {
    return matmul(l2_normalize(feats, 1), transpose(l2_normalize(w, 1)));
  };

  run("orthogonality_loss",
      [&] { return orthogonality_loss(l2_normalize(f_u, 1), l2_normalize(f_v, 1)); }, {f_u, f_v});
  run("ambiguity_loss(idamb)",
      [&] { return ambiguity_loss(softmax_rows(cls_cosines(f_u, w_d))); }, {f_u, w_d});
  run("ambiguity_loss(liamb)",
      [&] { return ambiguity_loss(softmax_rows(cls_cosines(f_v, w_c))); }, {f_v, w_c});
  {
    Tensor views = random_leaf({6, n}, rng, -1, 1);
    ContrastLabeling labels;
    labels.labels = {0, 1, 0, 2, 1, 0};
    run("aaic_loss(as_written)",
        [&] { return aaic_loss(views, labels, lw.tau, AaicForm::as_written); }, {views});
    run("aaic_loss(log)", [&] { return aaic_loss(views, labels, lw.tau, AaicForm::log_form); },
        {views});
  }
  run("asym_am_softmax",
      [&] {
        return asym_am_softmax(cls_cosines(f_u, w_c), liveness, lw.am_scale, lw.margin_live,
                               lw.margin_spoof);
      },
      {f_u, w_c});
  run("cross_entropy(id)",
      [&] { return cross_entropy(softmax_rows(cls_cosines(f_v, w_d)), identity); }, {f_v, w_d});

  // composite objectives over shared leaves
  run("L_FAS",
      [&] {
        FasLossParts parts;
        parts.cls = asym_am_softmax(cls_cosines(f_u, w_c), liveness, lw.am_scale, lw.margin_live,
                                    lw.margin_spoof);
        ContrastLabeling labels = fas_contrast_labels(liveness, 0);
        parts.aaic = aaic_loss(f_u, labels, lw.tau, AaicForm::as_written);
        parts.idamb = ambiguity_loss(softmax_rows(cls_cosines(f_u, w_d)));
        parts.ortho = orthogonality_loss(l2_normalize(f_u, 1), l2_normalize(f_v, 1));
        return compose_fas_loss(parts, lw);
      },
      {f_u, f_v, w_c, w_d});
  run("L_FR",
      [&] {
        FrLossParts parts;
        parts.id = cross_entropy(softmax_rows(cls_cosines(f_v, w_d)), identity);
        ContrastLabeling labels = fr_contrast_labels(identity, 0);
        parts.aaic = aaic_loss(f_v, labels, lw.tau, AaicForm::as_written);
        parts.liamb = ambiguity_loss(softmax_rows(cls_cosines(f_v, w_c)));
        parts.ortho = orthogonality_loss(l2_normalize(f_u, 1), l2_normalize(f_v, 1));
        return compose_fr_loss(parts, lw);
      },
      {f_u, f_v, w_c, w_d});

  return suite;
}

}  // namespace dlif
