#include "dlif/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dlif {

void ScoreSet::validate() const {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("ScoreSet: scores/labels size mismatch");
  }
  int live = 0, spoof = 0;
  for (int l : labels) {
    if (l == 1) {
      live++;
    } else if (l == 0) {
      spoof++;
    } else {
      throw std::invalid_argument("ScoreSet: label must be 0 or 1");
    }
  }
  if (live == 0 || spoof == 0) {
    throw std::invalid_argument("ScoreSet: needs at least one live and one spoof sample");
  }
}

double roc_auc(const ScoreSet& s) {
  s.validate();
  // Mann-Whitney via midranks.
  const size_t n = s.scores.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return s.scores[a] < s.scores[b]; });

  double rank_sum_live = 0.0;
  size_t n_live = 0, n_spoof = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && s.scores[order[j]] == s.scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (size_t k = i; k < j; ++k) {
      if (s.labels[order[k]] == 1) {
        rank_sum_live += midrank;
      }
    }
    i = j;
  }
  for (int l : s.labels) (l == 1 ? n_live : n_spoof)++;
  const double u = rank_sum_live - static_cast<double>(n_live) * (n_live + 1) / 2.0;
  return u / (static_cast<double>(n_live) * static_cast<double>(n_spoof));
}

namespace {

// FAR: spoof accepted as live; FRR: live rejected. Accept iff score >= t.
void rates_at(const ScoreSet& s, double threshold, double& far, double& frr) {
  int fa = 0, fr = 0, live = 0, spoof = 0;
  for (size_t i = 0; i < s.scores.size(); ++i) {
    if (s.labels[i] == 1) {
      live++;
      if (s.scores[i] < threshold) fr++;
    } else {
      spoof++;
      if (s.scores[i] >= threshold) fa++;
    }
  }
  far = static_cast<double>(fa) / spoof;
  frr = static_cast<double>(fr) / live;
}

}  // namespace

EerResult eer_threshold(const ScoreSet& s) {
  s.validate();
  std::vector<double> distinct = s.scores;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<double> candidates;
  candidates.push_back(distinct.front() - 1.0);  // accept everything
  for (size_t i = 0; i + 1 < distinct.size(); ++i) {
    candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));
  }
  candidates.push_back(distinct.back() + 1.0);  // reject everything

  EerResult best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (double t : candidates) {
    double far, frr;
    rates_at(s, t, far, frr);
    const double gap = std::fabs(far - frr);
    const double eer = 0.5 * (far + frr);
    if (gap < best_gap - 1e-15 || (std::fabs(gap - best_gap) <= 1e-15 && eer < best.eer)) {
      best_gap = gap;
      best.threshold = t;
      best.eer = eer;
    }
  }
  return best;
}

double hter(const ScoreSet& s, double threshold) {
  s.validate();
  double far, frr;
  rates_at(s, threshold, far, frr);
  return 0.5 * (far + frr);
}

std::string DisentanglementReport::to_string() const {
  std::ostringstream os;
  os << "mean_abs_cross_cosine = " << mean_abs_cross_cosine << "\n"
     << "identity_acc_on_u = " << identity_acc_on_u << " (chance " << identity_chance << ")\n"
     << "identity_acc_on_v = " << identity_acc_on_v << "\n"
     << "liveness_acc_on_u = " << liveness_acc_on_u << " (chance " << liveness_chance << ")\n"
     << "liveness_acc_on_v = " << liveness_acc_on_v << "\n"
     << "mean_liveness_ambiguity_on_v = " << mean_liveness_ambiguity_on_v << "\n";
  return os.str();
}

namespace {

std::vector<std::vector<double>> normalized_rows(const Tensor& m) {
  const int rows = m->dim(0), cols = m->dim(1);
  std::vector<std::vector<double>> out(rows, std::vector<double>(cols));
  for (int r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (int c = 0; c < cols; ++c) {
      out[r][c] = m->data[static_cast<int64_t>(r) * cols + c];
      n2 += out[r][c] * out[r][c];
    }
    const double n = std::max(std::sqrt(n2), 1e-12);
    for (int c = 0; c < cols; ++c) out[r][c] /= n;
  }
  return out;
}

// Nearest class centroid in cosine distance, centroids fitted on the same
// feature set.
double centroid_probe_accuracy(const std::vector<std::vector<double>>& feats,
                               const std::vector<int>& labels) {
  const int n = static_cast<int>(feats.size());
  const int d = static_cast<int>(feats[0].size());
  std::map<int, std::vector<double>> centroids;
  std::map<int, int> counts;
  for (int i = 0; i < n; ++i) {
    auto& c = centroids[labels[i]];
    if (c.empty()) c.assign(d, 0.0);
    for (int k = 0; k < d; ++k) c[k] += feats[i][k];
    counts[labels[i]]++;
  }
  for (auto& [label, c] : centroids) {
    double n2 = 0.0;
    for (double v : c) n2 += v * v;
    const double norm = std::max(std::sqrt(n2), 1e-12);
    for (double& v : c) v /= norm;
    (void)label;
  }
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    double best = -2.0;
    int best_label = -1;
    for (const auto& [label, c] : centroids) {
      double cos = 0.0;
      for (int k = 0; k < d; ++k) cos += feats[i][k] * c[k];
      if (cos > best) {
        best = cos;
        best_label = label;
      }
    }
    if (best_label == labels[i]) correct++;
  }
  return static_cast<double>(correct) / n;
}

}  // namespace

DisentanglementReport probe_disentanglement(const Tensor& features_u, const Tensor& features_v,
                                            const std::vector<int>& identity_labels,
                                            const std::vector<int>& liveness_labels,
                                            const std::vector<double>& liveness_probs_on_v) {
  if (features_u->rank() != 2 || features_v->rank() != 2 ||
      features_u->dim(0) != features_v->dim(0)) {
    throw std::invalid_argument("probe_disentanglement: feature shape mismatch");
  }
  const int n = features_u->dim(0);
  if (static_cast<int>(identity_labels.size()) != n ||
      static_cast<int>(liveness_labels.size()) != n) {
    throw std::invalid_argument("probe_disentanglement: label count mismatch");
  }
  std::map<int, int> id_classes, live_classes;
  for (int i = 0; i < n; ++i) {
    id_classes[identity_labels[i]]++;
    live_classes[liveness_labels[i]]++;
  }
  if (id_classes.size() < 2 || live_classes.size() < 2) {
    throw std::invalid_argument("probe_disentanglement: labels are single-class");
  }

  auto fu = normalized_rows(features_u);
  auto fv = normalized_rows(features_v);
  const int d_u = static_cast<int>(fu[0].size());
  const int d_v = static_cast<int>(fv[0].size());
  if (d_u != d_v) throw std::invalid_argument("probe_disentanglement: feature dims differ");

  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double cos = 0.0;
      for (int k = 0; k < d_u; ++k) cos += fu[i][k] * fv[j][k];
      acc += std::fabs(cos);
    }
  }

  DisentanglementReport rep;
  rep.mean_abs_cross_cosine = acc / (static_cast<double>(n) * n);
  rep.identity_acc_on_u = centroid_probe_accuracy(fu, identity_labels);
  rep.identity_acc_on_v = centroid_probe_accuracy(fv, identity_labels);
  rep.liveness_acc_on_u = centroid_probe_accuracy(fu, liveness_labels);
  rep.liveness_acc_on_v = centroid_probe_accuracy(fv, liveness_labels);
  rep.identity_chance = 1.0 / static_cast<double>(id_classes.size());
  rep.liveness_chance = 1.0 / static_cast<double>(live_classes.size());
  if (!liveness_probs_on_v.empty()) {
    double dev = 0.0;
    for (double p : liveness_probs_on_v) dev += std::fabs(p - 0.5);
    rep.mean_liveness_ambiguity_on_v = dev / static_cast<double>(liveness_probs_on_v.size());
  }
  return rep;
}

void export_embeddings(const Tensor& features, const std::vector<int>& identity,
                       const std::vector<int>& liveness, const std::vector<int>& domain,
                       int feature_dim, const std::string& out_file) {
  std::ofstream os(out_file);
  if (!os) throw std::runtime_error("export_embeddings: cannot open " + out_file);
  for (int k = 0; k < feature_dim; ++k) os << "dim_" << k << ", ";
  os << "identity, liveness, domain\n";
  const int n = features ? features->dim(0) : 0;
  char buf[40];
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < feature_dim; ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", features->data[static_cast<int64_t>(i) * feature_dim + k]);
      os << buf << ", ";
    }
    os << identity[i] << ", " << liveness[i] << ", " << domain[i] << "\n";
  }
  if (!os) throw std::runtime_error("export_embeddings: write failed for " + out_file);
}

std::vector<EmbeddingRow> read_embeddings(const std::string& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("read_embeddings: cannot open " + file);
  std::string header;
  std::getline(is, header);
  int dims = 0;
  {
    std::istringstream hs(header);
    std::string col;
    while (std::getline(hs, col, ',')) {
      if (col.find("dim_") != std::string::npos) dims++;
    }
  }
  std::vector<EmbeddingRow> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    EmbeddingRow row;
    std::string cell;
    for (int k = 0; k < dims; ++k) {
      std::getline(ls, cell, ',');
      row.values.push_back(std::stod(cell));
    }
    std::getline(ls, cell, ',');
    row.identity = std::stoi(cell);
    std::getline(ls, cell, ',');
    row.liveness = std::stoi(cell);
    std::getline(ls, cell, ',');
    row.domain = std::stoi(cell);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dlif
