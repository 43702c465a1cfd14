#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "dlif/losses.hpp"
#include "helpers.hpp"

using namespace dlif;
using dlif_test::random_tensor;

TEST_SUITE_BEGIN("losses");

namespace {

Tensor normalized_rows(Shape shape, std::mt19937_64& rng) {
  Tensor t = random_tensor(shape, rng, -1.0, 1.0);
  const int rows = t->dim(0), cols = t->dim(1);
  for (int r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (int c = 0; c < cols; ++c) n2 += t->data[r * cols + c] * t->data[r * cols + c];
    const double n = std::sqrt(n2);
    for (int c = 0; c < cols; ++c) t->data[r * cols + c] /= n;
  }
  return t;
}

}  // namespace

TEST_CASE("orthogonality of a vector with itself is 1") {
  Tensor f = make_tensor({1, 3}, {1.0, 0.0, 0.0});
  CHECK(orthogonality_loss(f, f)->scalar() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("orthogonality of mutually orthogonal batches is 0") {
  Tensor fu = make_tensor({2, 4}, {1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0});
  Tensor fv = make_tensor({2, 4}, {0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0});
  CHECK(orthogonality_loss(fu, fv)->scalar() == 0.0);
}

TEST_CASE("orthogonality matches the double-loop cosine oracle") {
  std::mt19937_64 rng(51);
  Tensor fu = normalized_rows({4, 8}, rng);
  Tensor fv = normalized_rows({4, 8}, rng);
  double expect = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      double cos = 0.0;
      for (int k = 0; k < 8; ++k) cos += fu->data[i * 8 + k] * fv->data[j * 8 + k];
      expect += cos * cos;
    }
  }
  expect /= 16.0;
  CHECK(orthogonality_loss(fu, fv)->scalar() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("orthogonality is symmetric, permutation-invariant and within [0,1]") {
  std::mt19937_64 rng(52);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor fu = normalized_rows({5, 6}, rng);
    Tensor fv = normalized_rows({5, 6}, rng);
    const double base = orthogonality_loss(fu, fv)->scalar();
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
    CHECK(orthogonality_loss(fv, fu)->scalar() == doctest::Approx(base).epsilon(1e-12));
    // permute fu's rows
    Tensor fup = make_tensor(fu->shape, fu->data);
    std::vector<int> perm{4, 2, 0, 1, 3};
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 6; ++c) fup->data[r * 6 + c] = fu->data[perm[r] * 6 + c];
    }
    CHECK(orthogonality_loss(fup, fv)->scalar() == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("orthogonality rejects unnormalized rows") {
  Tensor fu = make_tensor({1, 2}, {2.0, 0.0});
  Tensor fv = make_tensor({1, 2}, {1.0, 0.0});
  CHECK_THROWS_AS(orthogonality_loss(fu, fv), std::invalid_argument);
}

TEST_CASE("ambiguity of uniform rows is 0") {
  for (int k : {2, 3, 4, 7}) {
    Tensor probs = full({3, k}, 1.0 / k);
    CHECK(ambiguity_loss(probs)->scalar() == 0.0);
  }
}

TEST_CASE("ambiguity of one-hot rows: 0.75 for K=4, 0.5 for K=2") {
  Tensor p4 = make_tensor({1, 4}, {1.0, 0.0, 0.0, 0.0});
  CHECK(ambiguity_loss(p4)->scalar() == doctest::Approx(0.75).epsilon(1e-12));
  Tensor p2 = make_tensor({1, 2}, {1.0, 0.0});
  CHECK(ambiguity_loss(p2)->scalar() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("ambiguity is positive unless all rows are uniform") {
  std::mt19937_64 rng(53);
  Tensor z = random_tensor({4, 5}, rng, -1.0, 1.0);
  Tensor probs = softmax_rows(z);
  CHECK(ambiguity_loss(probs)->scalar() > 0.0);
  CHECK_THROWS_AS(ambiguity_loss(full({2, 1}, 1.0)), std::invalid_argument);  // K < 2
}

TEST_CASE("aaic with two views and distinct labels is 0") {
  std::mt19937_64 rng(54);
  Tensor views = random_tensor({2, 6}, rng, -1, 1);
  ContrastLabeling labels;
  labels.labels = {0, 1};
  CHECK(aaic_loss(views, labels, 0.07, AaicForm::as_written)->scalar() == 0.0);
  CHECK(aaic_loss(views, labels, 0.07, AaicForm::log_form)->scalar() == 0.0);
}

TEST_CASE("aaic with two views sharing a label is -1 as written") {
  std::mt19937_64 rng(55);
  Tensor views = random_tensor({2, 6}, rng, -1, 1);
  ContrastLabeling labels;
  labels.labels = {3, 3};
  CHECK(aaic_loss(views, labels, 0.07, AaicForm::as_written)->scalar() ==
        doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("aaic matches the exhaustive pair-enumeration oracle in both forms") {
  std::mt19937_64 rng(56);
  for (int trial = 0; trial < 25; ++trial) {
    const int p = 6, n = 5;
    Tensor views = random_tensor({p, n}, rng, -1, 1);
    ContrastLabeling labels;
    labels.labels.resize(p);
    std::uniform_int_distribution<int> ld(0, 2);
    for (int& l : labels.labels) l = ld(rng);

    const double tau = 0.07;
    // normalize rows
    std::vector<std::vector<double>> f(p, std::vector<double>(n));
    for (int i = 0; i < p; ++i) {
      double n2 = 0.0;
      for (int k = 0; k < n; ++k) n2 += views->data[i * n + k] * views->data[i * n + k];
      for (int k = 0; k < n; ++k) f[i][k] = views->data[i * n + k] / std::sqrt(n2);
    }
    auto sim = [&](int i, int j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += f[i][k] * f[j][k];
      return s;
    };
    double as_written = 0.0, log_form = 0.0;
    for (int i = 0; i < p; ++i) {
      double denom = 0.0;
      for (int k = 0; k < p; ++k) {
        if (k != i) denom += std::exp(sim(i, k) / tau);
      }
      int pos = 0;
      double acc_aw = 0.0, acc_log = 0.0;
      for (int j = 0; j < p; ++j) {
        if (j == i || labels.labels[j] != labels.labels[i]) continue;
        pos++;
        acc_aw += std::exp(sim(i, j) / tau) / denom;
        acc_log += std::log(std::exp(sim(i, j) / tau) / denom);
      }
      as_written += acc_aw;
      if (pos > 0) log_form += acc_log / pos;
    }
    as_written = -as_written / p;
    log_form = -log_form / p;
    CHECK(aaic_loss(views, labels, tau, AaicForm::as_written)->scalar() ==
          doctest::Approx(as_written).epsilon(1e-12));
    CHECK(aaic_loss(views, labels, tau, AaicForm::log_form)->scalar() ==
          doctest::Approx(log_form).epsilon(1e-12));
  }
}

TEST_CASE("aaic depends only on the label partition and is never positive") {
  std::mt19937_64 rng(57);
  Tensor views = random_tensor({6, 5}, rng, -1, 1);
  ContrastLabeling a, b;
  a.labels = {0, 1, 0, 2, 1, 0};
  b.labels = {7, 3, 7, 9, 3, 7};  // relabeled bijectively
  for (AaicForm form : {AaicForm::as_written, AaicForm::log_form}) {
    const double va = aaic_loss(views, a, 0.07, form)->scalar();
    CHECK(va == aaic_loss(views, b, 0.07, form)->scalar());
  }
  const double aw = aaic_loss(views, a, 0.07, AaicForm::as_written)->scalar();
  CHECK(aw <= 0.0);
  CHECK(aw >= -1.0);

  // permuting views alongside their labels leaves the loss unchanged
  std::vector<int> perm{5, 3, 1, 0, 4, 2};
  Tensor pv = make_tensor(views->shape, views->data);
  ContrastLabeling pl;
  pl.labels.resize(6);
  for (int i = 0; i < 6; ++i) {
    pl.labels[i] = a.labels[perm[i]];
    for (int k = 0; k < 5; ++k) pv->data[i * 5 + k] = views->data[perm[i] * 5 + k];
  }
  for (AaicForm form : {AaicForm::as_written, AaicForm::log_form}) {
    CHECK(aaic_loss(pv, pl, 0.07, form)->scalar() ==
          doctest::Approx(aaic_loss(views, a, 0.07, form)->scalar()).epsilon(1e-12));
  }
  CHECK_THROWS_AS(aaic_loss(views, a, 0.0, AaicForm::as_written), std::invalid_argument);
}

TEST_CASE("margin-free asymmetric am-softmax equals plain cross-entropy") {
  std::mt19937_64 rng(58);
  Tensor cosines = random_tensor({5, 2}, rng, -1.0, 1.0);
  std::vector<int> labels{1, 0, 1, 0, 1};
  const double s = 1.0;
  double expect = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double z0 = std::exp(s * cosines->data[i * 2]);
    const double z1 = std::exp(s * cosines->data[i * 2 + 1]);
    const double p = (labels[i] == 1 ? z1 : z0) / (z0 + z1);
    expect -= std::log(p);
  }
  expect /= 5.0;
  CHECK(asym_am_softmax(cosines, labels, s, 0.0, 0.0)->scalar() ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("well-separated cosine with margin 0.4 at s=30 gives a vanishing loss") {
  Tensor cosines = make_tensor({1, 2}, {-1.0, 1.0});  // target class 1
  const double expect = std::log(1.0 + std::exp(30.0 * (-1.0 - (1.0 - 0.4))));
  const double got = asym_am_softmax(cosines, {1}, 30.0, 0.4, 0.1)->scalar();
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  CHECK(got < 1e-12);
}

TEST_CASE("equal cosines with zero margin cost log 2 per sample") {
  Tensor cosines = make_tensor({2, 2}, {0.3, 0.3, -0.7, -0.7});
  const double got = asym_am_softmax(cosines, {1, 0}, 30.0, 0.0, 0.0)->scalar();
  CHECK(got == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("asymmetric am-softmax is monotone non-increasing in the target cosine") {
  std::mt19937_64 rng(59);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    const double other = d(rng);
    double c1 = d(rng), c2 = d(rng);
    if (c1 > c2) std::swap(c1, c2);
    Tensor lo = make_tensor({1, 2}, {other, c1});
    Tensor hi = make_tensor({1, 2}, {other, c2});
    const double l_lo = asym_am_softmax(lo, {1}, 30.0, 0.4, 0.1)->scalar();
    const double l_hi = asym_am_softmax(hi, {1}, 30.0, 0.4, 0.1)->scalar();
    CHECK(l_hi <= l_lo + 1e-15);
  }
  Tensor c = make_tensor({1, 2}, {0.0, 0.0});
  CHECK_THROWS_AS(asym_am_softmax(c, {2}, 30.0, 0.4, 0.1), std::invalid_argument);
}

TEST_CASE("composition with zero weights reduces to the classification term") {
  std::mt19937_64 rng(60);
  FasLossParts parts;
  parts.cls = make_tensor({1}, {0.37});
  parts.aaic = make_tensor({1}, {-0.5});
  parts.idamb = make_tensor({1}, {0.2});
  parts.ortho = make_tensor({1}, {0.1});
  LossWeights w;
  w.aaic_u = w.idamb = w.ortho_u = 0.0;
  CHECK(compose_fas_loss(parts, w)->scalar() == 0.37);
}

TEST_CASE("composition of unit terms with unit weights is 4") {
  FasLossParts fas;
  fas.cls = full({1}, 1.0);
  fas.aaic = full({1}, 1.0);
  fas.idamb = full({1}, 1.0);
  fas.ortho = full({1}, 1.0);
  LossWeights w;
  CHECK(compose_fas_loss(fas, w)->scalar() == 4.0);
  FrLossParts fr;
  fr.id = full({1}, 1.0);
  fr.aaic = full({1}, 1.0);
  fr.liamb = full({1}, 1.0);
  fr.ortho = full({1}, 1.0);
  CHECK(compose_fr_loss(fr, w)->scalar() == 4.0);
}

TEST_CASE("composition equals the manual weighted sum of its terms") {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> d(0.0, 2.0);
  LossWeights w;
  w.aaic_u = d(rng);
  w.idamb = d(rng);
  w.ortho_u = d(rng);
  FasLossParts parts;
  parts.cls = full({1}, d(rng));
  parts.aaic = full({1}, -d(rng));
  parts.idamb = full({1}, d(rng));
  parts.ortho = full({1}, d(rng));
  const double expect = parts.cls->scalar() + w.aaic_u * parts.aaic->scalar() +
                        w.idamb * parts.idamb->scalar() + w.ortho_u * parts.ortho->scalar();
  CHECK(compose_fas_loss(parts, w)->scalar() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("composition names the non-finite term") {
  FasLossParts parts;
  parts.cls = full({1}, 1.0);
  parts.idamb = full({1}, std::numeric_limits<double>::infinity());
  LossWeights w;
  CHECK_THROWS_WITH_AS(compose_fas_loss(parts, w), doctest::Contains("L_idamb"), std::domain_error);
}

TEST_CASE("contrast label construction for both tasks") {
  // FAS: live views collapse to label 0, each spoof keeps a private label
  ContrastLabeling fas = fas_contrast_labels({1, 0, 1, 0}, 2);
  REQUIRE(fas.labels.size() == 12);
  const std::vector<int> expect_fas{0, 2, 0, 4, 0, 2, 0, 4, 0, 2, 0, 4};
  CHECK(fas.labels == expect_fas);
  // FR: all views of one identity share its label
  ContrastLabeling fr = fr_contrast_labels({9, 4, 9}, 1);
  const std::vector<int> expect_fr{9, 4, 9, 9, 4, 9};
  CHECK(fr.labels == expect_fr);
}

TEST_CASE("binary contrast treats liveness as the only partition") {
  std::mt19937_64 rng(62);
  Tensor views = random_tensor({6, 5}, rng, -1, 1);
  std::vector<int> liveness{1, 1, 1, 0, 0, 0};
  ContrastLabeling equivalent;
  equivalent.labels = liveness;
  CHECK(binary_contrast_loss(views, liveness, 0.07)->scalar() ==
        aaic_loss(views, equivalent, 0.07, AaicForm::log_form)->scalar());
}

TEST_CASE("triplet contrast is zero when classes are far apart") {
  Tensor views = make_tensor({4, 2}, {1.0, 0.0, 1.0, 0.01,  // live cluster
                                      -1.0, 0.0, -1.0, 0.01});
  const double loss = triplet_contrast_loss(views, {1, 1, 0, 0}, 0.3)->scalar();
  CHECK(loss == 0.0);
}

TEST_SUITE_END();
