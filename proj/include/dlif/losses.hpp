#pragma once

#include <string>
#include <vector>

#include "dlif/tensor.hpp"

namespace dlif {

struct LossWeights {
  double aaic_u = 1.0;
  double idamb = 1.0;
  double ortho_u = 1.0;
  double aaic_v = 1.0;
  double liamb = 1.0;
  double ortho_v = 1.0;
  double tau = 0.07;
  double am_scale = 30.0;
  double margin_live = 0.4;
  double margin_spoof = 0.1;

  void validate() const;
};

enum class AaicForm { as_written, log_form };

// Contrast labels over a view pool laid out as originals followed by the
// augmented view sets, one label per view. Only the induced partition
// matters.
struct ContrastLabeling {
  std::vector<int> labels;
};

// FAS task: every live view shares label 0; spoof original i and all its
// augmented views get the unique label i+1.
ContrastLabeling fas_contrast_labels(const std::vector<int>& liveness, int num_view_sets);
// FR task: all views of identity k share label k.
ContrastLabeling fr_contrast_labels(const std::vector<int>& identity, int num_view_sets);

// Mean squared cosine similarity over all cross-space pairs; rows of both
// inputs must be L2-normalized (norm within 1e-3 of 1).
Tensor orthogonality_loss(const Tensor& f_u, const Tensor& f_v);

// Mean squared deviation of probability rows from the uniform vector 1/K.
Tensor ambiguity_loss(const Tensor& probs);

// Augmented-instance contrast over a pooled view set (diagonal masked).
Tensor aaic_loss(const Tensor& views, const ContrastLabeling& labeling, double tau, AaicForm form);

// Cross-entropy on s-scaled cosines with a per-class margin subtracted from
// the target cosine.
Tensor asym_am_softmax(const Tensor& cosines, const std::vector<int>& liveness_labels, double s,
                       double margin_live, double margin_spoof);

// Mean softmax cross-entropy against integer class targets.
Tensor cross_entropy(const Tensor& probs, const std::vector<int>& targets);

struct FasLossParts {
  Tensor cls, aaic, idamb, ortho;  // any may be null (term dropped)
};
struct FrLossParts {
  Tensor id, aaic, liamb, ortho;
};

Tensor compose_fas_loss(const FasLossParts& parts, const LossWeights& w);
Tensor compose_fr_loss(const FrLossParts& parts, const LossWeights& w);

// Reference contrast baselines for the ablation harness.
Tensor binary_contrast_loss(const Tensor& views, const std::vector<int>& liveness_labels, double tau);
Tensor triplet_contrast_loss(const Tensor& views, const std::vector<int>& liveness_labels, double margin);

}  // namespace dlif
