#include "dlif/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace dlif {

void LossWeights::validate() const {
  if (tau <= 0.0) throw std::invalid_argument("LossWeights: tau must be positive");
  if (am_scale <= 0.0) throw std::invalid_argument("LossWeights: am_scale must be positive");
  if (margin_live < 0.0 || margin_live >= 1.0 || margin_spoof < 0.0 || margin_spoof >= 1.0) {
    throw std::invalid_argument("LossWeights: margins must lie in [0,1)");
  }
}

ContrastLabeling fas_contrast_labels(const std::vector<int>& liveness, int num_view_sets) {
  const int b = static_cast<int>(liveness.size());
  ContrastLabeling out;
  out.labels.reserve(static_cast<size_t>(b) * (1 + num_view_sets));
  for (int set = 0; set < 1 + num_view_sets; ++set) {
    for (int i = 0; i < b; ++i) {
      out.labels.push_back(liveness[i] == 1 ? 0 : i + 1);
    }
  }
  return out;
}

ContrastLabeling fr_contrast_labels(const std::vector<int>& identity, int num_view_sets) {
  const int b = static_cast<int>(identity.size());
  ContrastLabeling out;
  out.labels.reserve(static_cast<size_t>(b) * (1 + num_view_sets));
  for (int set = 0; set < 1 + num_view_sets; ++set) {
    for (int i = 0; i < b; ++i) out.labels.push_back(identity[i]);
  }
  return out;
}

namespace {

void check_normalized_rows(const char* what, const Tensor& m) {
  const int rows = m->dim(0), cols = m->dim(1);
  for (int r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double v = m->data[static_cast<int64_t>(r) * cols + c];
      n2 += v * v;
    }
    if (std::fabs(std::sqrt(n2) - 1.0) > 1e-3) {
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(r) +
                                  " is not L2-normalized (norm " + std::to_string(std::sqrt(n2)) + ")");
    }
  }
}

Tensor reciprocal(const Tensor& positive) { return exp(scale(log(positive), -1.0)); }

// -(1/B) * sum_i log probs[i, target_i]
Tensor nll_of_probs(const Tensor& probs, const std::vector<int>& targets) {
  const int b = probs->dim(0), k = probs->dim(1);
  std::vector<double> onehot(static_cast<size_t>(b) * k, 0.0);
  for (int i = 0; i < b; ++i) {
    if (targets[i] < 0 || targets[i] >= k) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(targets[i]) +
                                  " out of range for " + std::to_string(k) + " classes");
    }
    onehot[static_cast<int64_t>(i) * k + targets[i]] = 1.0;
  }
  Tensor y = make_tensor({b, k}, std::move(onehot));
  return scale(sum(mul(log(probs), y)), -1.0 / b);
}

}  // namespace

Tensor orthogonality_loss(const Tensor& f_u, const Tensor& f_v) {
  if (f_u->rank() != 2 || f_v->rank() != 2 || f_u->shape != f_v->shape) {
    throw std::invalid_argument("orthogonality_loss: F_u " + shape_str(f_u->shape) + " vs F_v " +
                                shape_str(f_v->shape));
  }
  check_normalized_rows("orthogonality_loss F_u", f_u);
  check_normalized_rows("orthogonality_loss F_v", f_v);
  const int b = f_u->dim(0);
  Tensor sim = matmul(f_u, transpose(f_v));
  return scale(sum(square(sim)), 1.0 / (static_cast<double>(b) * b));
}

Tensor ambiguity_loss(const Tensor& probs) {
  if (probs->rank() != 2) {
    throw std::invalid_argument("ambiguity_loss: expects [B,K] probabilities");
  }
  const int b = probs->dim(0), k = probs->dim(1);
  if (k < 2) throw std::invalid_argument("ambiguity_loss: K must be at least 2");
  for (int r = 0; r < b; ++r) {
    double rs = 0.0;
    for (int c = 0; c < k; ++c) rs += probs->data[static_cast<int64_t>(r) * k + c];
    if (std::fabs(rs - 1.0) > 1e-6) {
      throw std::invalid_argument("ambiguity_loss: row " + std::to_string(r) + " sums to " +
                                  std::to_string(rs));
    }
  }
  Tensor uniform = full({b, k}, -1.0 / k);
  return scale(sum(square(add(probs, uniform))), 1.0 / b);
}

Tensor aaic_loss(const Tensor& views, const ContrastLabeling& labeling, double tau, AaicForm form) {
  if (tau <= 0.0) throw std::invalid_argument("aaic_loss: tau must be positive");
  if (views->rank() != 2) throw std::invalid_argument("aaic_loss: expects [P,N] views");
  const int p = views->dim(0);
  if (p < 2) throw std::invalid_argument("aaic_loss: needs at least two views");
  if (static_cast<int>(labeling.labels.size()) != p) {
    throw std::invalid_argument("aaic_loss: " + std::to_string(labeling.labels.size()) +
                                " labels for " + std::to_string(p) + " views");
  }

  Tensor fn = l2_normalize(views, 1);
  Tensor sim = matmul(fn, transpose(fn));  // s_ij
  Tensor e = exp(scale(sim, 1.0 / tau));

  std::vector<double> offdiag(static_cast<size_t>(p) * p, 1.0);
  std::vector<double> positives(static_cast<size_t>(p) * p, 0.0);
  std::vector<int> pos_count(p, 0);
  for (int i = 0; i < p; ++i) {
    offdiag[static_cast<int64_t>(i) * p + i] = 0.0;
    for (int j = 0; j < p; ++j) {
      if (i != j && labeling.labels[i] == labeling.labels[j]) {
        positives[static_cast<int64_t>(i) * p + j] = 1.0;
        pos_count[i]++;
      }
    }
  }

  Tensor e_masked = mul(e, make_tensor({p, p}, std::move(offdiag)));
  Tensor ones_col = full({p, 1}, 1.0);
  Tensor denom = matmul(e_masked, ones_col);  // [P,1], strictly positive

  if (form == AaicForm::as_written) {
    Tensor pos_mat = make_tensor({p, p}, std::move(positives));
    Tensor pos_sum = matmul(mul(e_masked, pos_mat), ones_col);  // [P,1]
    Tensor ratio = mul(pos_sum, reciprocal(denom));
    return scale(sum(ratio), -1.0 / p);
  }

  // log form: per-anchor mean of log softmax terms over its positives
  std::vector<double> weights(static_cast<size_t>(p) * p, 0.0);
  for (int i = 0; i < p; ++i) {
    if (pos_count[i] == 0) continue;
    for (int j = 0; j < p; ++j) {
      weights[static_cast<int64_t>(i) * p + j] = positives[static_cast<int64_t>(i) * p + j] / pos_count[i];
    }
  }
  Tensor w = make_tensor({p, p}, std::move(weights));
  Tensor log_denom_rows = matmul(log(denom), full({1, p}, 1.0));  // [P,P], row-constant
  Tensor log_terms = add(scale(sim, 1.0 / tau), scale(log_denom_rows, -1.0));
  return scale(sum(mul(w, log_terms)), -1.0 / p);
}

Tensor asym_am_softmax(const Tensor& cosines, const std::vector<int>& liveness_labels, double s,
                       double margin_live, double margin_spoof) {
  if (cosines->rank() != 2 || cosines->dim(1) != 2) {
    throw std::invalid_argument("asym_am_softmax: expects [B,2] cosines");
  }
  const int b = cosines->dim(0);
  if (static_cast<int>(liveness_labels.size()) != b) {
    throw std::invalid_argument("asym_am_softmax: label count mismatch");
  }
  std::vector<double> margin(static_cast<size_t>(b) * 2, 0.0);
  for (int i = 0; i < b; ++i) {
    const int y = liveness_labels[i];
    if (y != 0 && y != 1) {
      throw std::invalid_argument("asym_am_softmax: invalid liveness label " + std::to_string(y));
    }
    margin[static_cast<int64_t>(i) * 2 + y] = -(y == 1 ? margin_live : margin_spoof);
  }
  Tensor adjusted = add(cosines, make_tensor({b, 2}, std::move(margin)));
  Tensor probs = softmax_rows(scale(adjusted, s));
  return nll_of_probs(probs, liveness_labels);
}

Tensor cross_entropy(const Tensor& probs, const std::vector<int>& targets) {
  if (probs->rank() != 2) throw std::invalid_argument("cross_entropy: expects [B,K] probabilities");
  if (static_cast<int>(targets.size()) != probs->dim(0)) {
    throw std::invalid_argument("cross_entropy: target count mismatch");
  }
  return nll_of_probs(probs, targets);
}

namespace {

void check_finite_term(const char* term, const Tensor& t) {
  if (t->size() != 1) throw std::invalid_argument(std::string(term) + ": loss term must be scalar");
  if (!std::isfinite(t->data[0])) {
    throw std::domain_error(std::string("compose: non-finite term ") + term + " = " +
                            std::to_string(t->data[0]));
  }
}

Tensor add_weighted(Tensor acc, const Tensor& term, double weight) {
  if (!term || weight == 0.0) return acc;
  return add(acc, scale(term, weight));
}

}  // namespace

Tensor compose_fas_loss(const FasLossParts& parts, const LossWeights& w) {
  if (!parts.cls) throw std::invalid_argument("compose_fas_loss: missing classification term");
  check_finite_term("L_cls", parts.cls);
  if (parts.aaic) check_finite_term("L_aaicU", parts.aaic);
  if (parts.idamb) check_finite_term("L_idamb", parts.idamb);
  if (parts.ortho) check_finite_term("L_orthoU", parts.ortho);
  Tensor total = parts.cls;
  total = add_weighted(total, parts.aaic, w.aaic_u);
  total = add_weighted(total, parts.idamb, w.idamb);
  total = add_weighted(total, parts.ortho, w.ortho_u);
  return total;
}

Tensor compose_fr_loss(const FrLossParts& parts, const LossWeights& w) {
  if (!parts.id) throw std::invalid_argument("compose_fr_loss: missing identity term");
  check_finite_term("L_id", parts.id);
  if (parts.aaic) check_finite_term("L_aaicV", parts.aaic);
  if (parts.liamb) check_finite_term("L_liamb", parts.liamb);
  if (parts.ortho) check_finite_term("L_orthoV", parts.ortho);
  Tensor total = parts.id;
  total = add_weighted(total, parts.aaic, w.aaic_v);
  total = add_weighted(total, parts.liamb, w.liamb);
  total = add_weighted(total, parts.ortho, w.ortho_v);
  return total;
}

Tensor binary_contrast_loss(const Tensor& views, const std::vector<int>& liveness_labels, double tau) {
  ContrastLabeling labeling;
  labeling.labels = liveness_labels;
  return aaic_loss(views, labeling, tau, AaicForm::log_form);
}

Tensor triplet_contrast_loss(const Tensor& views, const std::vector<int>& liveness_labels,
                             double margin) {
  if (views->rank() != 2) throw std::invalid_argument("triplet_contrast_loss: expects [P,N] views");
  const int p = views->dim(0);
  if (static_cast<int>(liveness_labels.size()) != p) {
    throw std::invalid_argument("triplet_contrast_loss: label count mismatch");
  }
  Tensor fn = l2_normalize(views, 1);
  Tensor sim = matmul(fn, transpose(fn));

  // batch-hard selection on forward values, differentiable through the picks
  std::vector<double> pos_pick(static_cast<size_t>(p) * p, 0.0);
  std::vector<double> neg_pick(static_cast<size_t>(p) * p, 0.0);
  std::vector<double> margins(p, 0.0);  // margin only at rows with a valid triplet
  int anchors = 0;
  for (int i = 0; i < p; ++i) {
    int hardest_pos = -1, hardest_neg = -1;
    for (int j = 0; j < p; ++j) {
      if (j == i) continue;
      const double sij = sim->data[static_cast<int64_t>(i) * p + j];
      if (liveness_labels[j] == liveness_labels[i]) {
        if (hardest_pos < 0 || sij < sim->data[static_cast<int64_t>(i) * p + hardest_pos]) hardest_pos = j;
      } else {
        if (hardest_neg < 0 || sij > sim->data[static_cast<int64_t>(i) * p + hardest_neg]) hardest_neg = j;
      }
    }
    if (hardest_pos < 0 || hardest_neg < 0) continue;
    pos_pick[static_cast<int64_t>(i) * p + hardest_pos] = 1.0;
    neg_pick[static_cast<int64_t>(i) * p + hardest_neg] = 1.0;
    margins[i] = margin;
    anchors++;
  }
  if (anchors == 0) return zeros({1});

  Tensor ones_col = full({p, 1}, 1.0);
  Tensor pos = matmul(mul(sim, make_tensor({p, p}, std::move(pos_pick))), ones_col);
  Tensor neg = matmul(mul(sim, make_tensor({p, p}, std::move(neg_pick))), ones_col);
  Tensor hinge = relu(add(add(neg, scale(pos, -1.0)), make_tensor({p, 1}, std::move(margins))));
  return scale(sum(hinge), 1.0 / anchors);
}

}  // namespace dlif
