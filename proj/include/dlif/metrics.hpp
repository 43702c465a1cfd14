#pragma once

#include <string>
#include <vector>

#include "dlif/tensor.hpp"

namespace dlif {

// Liveness scores with their ground truth; label 1 = live, 0 = spoof.
struct ScoreSet {
  std::vector<double> scores;
  std::vector<int> labels;

  void validate() const;  // needs at least one live and one spoof
};

// Rank formulation: P(score_live > score_spoof) + 0.5 * P(tie).
double roc_auc(const ScoreSet& s);

struct EerResult {
  double threshold = 0.0;
  double eer = 0.0;
};

// Scans all distinct-score midpoints (plus outer sentinels) for the operating
// point where FAR and FRR cross.
EerResult eer_threshold(const ScoreSet& s);

// (FAR + FRR) / 2 at a fixed threshold; a sample is accepted as live when
// score >= threshold.
double hter(const ScoreSet& s, double threshold);

struct DisentanglementReport {
  double mean_abs_cross_cosine = 0.0;  // |cos(f_u_i, f_v_j)| over all pairs
  double identity_acc_on_u = 0.0;      // nearest-centroid probes
  double identity_acc_on_v = 0.0;
  double liveness_acc_on_u = 0.0;
  double liveness_acc_on_v = 0.0;
  double identity_chance = 0.0;
  double liveness_chance = 0.0;
  double mean_liveness_ambiguity_on_v = 0.0;  // mean |C(Norm(f_v)) - 0.5|

  std::string to_string() const;
};

// features_*: [n, N] raw (pre-normalization) features; liveness_probs_on_v:
// live-class probability of the classifier applied to f_v rows (may be empty
// to skip that probe).
DisentanglementReport probe_disentanglement(const Tensor& features_u, const Tensor& features_v,
                                            const std::vector<int>& identity_labels,
                                            const std::vector<int>& liveness_labels,
                                            const std::vector<double>& liveness_probs_on_v);

// CSV with header dim_0..dim_{N-1}, identity, liveness, domain.
void export_embeddings(const Tensor& features, const std::vector<int>& identity,
                       const std::vector<int>& liveness, const std::vector<int>& domain,
                       int feature_dim, const std::string& out_file);

struct EmbeddingRow {
  std::vector<double> values;
  int identity = 0, liveness = 0, domain = 0;
};
std::vector<EmbeddingRow> read_embeddings(const std::string& file);

}  // namespace dlif
