#pragma once

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dlif/config.hpp"
#include "dlif/losses.hpp"
#include "dlif/networks.hpp"
#include "dlif/synthdata.hpp"

namespace dlif {

struct TrainConfig {
  int epochs = 200;
  int steps_per_epoch = 5;
  double lr = 5e-4;
  int lr_halving_period = 50;
  double weight_decay = 5e-4;
  LossWeights weights;

  StylePlan plan_u;  // defaults to M+H parallel
  StylePlan plan_v;
  AaicForm aaic_form = AaicForm::as_written;
  enum class Contrast { aaic, binary, triplet } contrast = Contrast::aaic;
  double triplet_margin = 0.3;
  bool use_v = true;

  EncoderConfig encoder;  // cwsa_enabled applies to U only
  uint64_t seed = 1;

  enum class Selection { source_val, target_eval } selection = Selection::source_val;
  std::vector<int> source_domains{0, 1, 2};
  int target_domain = 3;
  double val_fraction = 0.10;  // held-out fraction of source identities
  int calib_samples = 128;     // train-split subsample for the HTER threshold

  int batch_ids_per_domain = 4;
  int batch_live_per_id = 4;
  int batch_spoof_per_id = 4;
  AugmentParams augment;

  void validate() const;
};

TrainConfig parse_train_config(const KeyValueConfig& cfg);
// The key set accepted by parse_train_config (for unknown-key rejection).
const std::set<std::string>& train_config_keys();

// lr0 * 0.5^floor(epoch/period), epoch counted from 0.
double lr_for_epoch(double lr0, int epoch, int period);

struct Models {
  EncoderParams enc_u, enc_v;
  HeadParams head_c, head_d;
  bool has_v = true;

  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> params_u() const;
  std::vector<Tensor> params_c() const { return {head_c.weight}; }
  std::vector<Tensor> params_v() const;
  std::vector<Tensor> params_d() const { return {head_d.weight}; }
};

Models init_models(const TrainConfig& config, int n_id, std::mt19937_64& rng);

struct AdamState {
  std::vector<std::vector<double>> m, v;  // aligned with the parameter list
  int64_t t = 0;
};

AdamState make_adam_state(const std::vector<Tensor>& params);

// Bias-corrected Adam with decoupled L2 decay applied before the update.
void adam_step(const std::vector<Tensor>& params, AdamState& state, double lr, double beta1,
               double beta2, double eps, double weight_decay);

struct Optimizers {
  AdamState u, c, v, d;
};

Optimizers make_optimizers(const Models& m);

struct StepLosses {
  int64_t step = 0;
  double cls = 0, aaic_u = 0, idamb = 0, ortho_u = 0, fas = 0;
  double id = 0, aaic_v = 0, liamb = 0, ortho_v = 0, fr = 0;
};

// Maps global identity ids to contiguous training classes.
struct TrainContext {
  std::map<int, int> id_class;
  int n_id = 0;
};

// Phase A updates U and C from the FAS objective; phase B updates V and D
// from the FR objective on the same batch. Cross-branch features are
// detached and cross-branch heads frozen, so each phase leaves the other
// branch bit-identical.
StepLosses train_step(Models& models, Optimizers& opt, const Batch& batch, const TrainContext& ctx,
                      const TrainConfig& config, double lr, std::mt19937_64& rng);

// The two halves of train_step, exposed so the isolation contract can be
// checked between them. Phase B consumes phase A's pre-update features.
struct PhaseAResult {
  Tensor f_u;        // liveness features, detached values
  Tensor f_v_graph;  // identity forward kept differentiable for phase B
};

PhaseAResult train_phase_fas(Models& models, Optimizers& opt, const Batch& batch,
                             const TrainConfig& config, double lr, const LevelPairings& pair_u,
                             StepLosses& rec);
void train_phase_fr(Models& models, Optimizers& opt, const Batch& batch, const TrainContext& ctx,
                    const TrainConfig& config, double lr, const LevelPairings& pair_v,
                    const PhaseAResult& phase_a, StepLosses& rec);

// Same-label permutations for one encoder's active style-cross levels.
LevelPairings draw_pairings(const StylePlan& plan, const std::vector<int>& group_labels,
                            std::mt19937_64& rng);

// Live-class probability of C over U features (scores for ROC/HTER).
std::vector<double> liveness_scores(const Models& models, const Tensor& images,
                                    const TrainConfig& config);

struct EpochMetrics {
  int epoch = 0;
  std::string split;
  double hter = 0, auc = 0, threshold = 0;
};

struct RunResult {
  std::vector<EpochMetrics> history;
  std::vector<StepLosses> losses;
  double best_auc = -1.0;
  double best_hter = 1.0;
  int best_epoch = -1;
  std::string best_checkpoint, last_checkpoint;
};

// Checkpoint = DLIF1 tensor dir (params + Adam moments) + state.txt with
// epoch, lr, best metrics and the rng stream. Saving rounds the live state to
// f32 so an in-process continuation matches a resumed one bit for bit.
void save_checkpoint(const std::string& dir, const Models& models, const Optimizers& opt, int epoch,
                     double lr, double best_auc, double best_hter, int best_epoch, int64_t step,
                     const std::mt19937_64& rng);

struct CheckpointState {
  int epoch = 0;
  double lr = 0;
  double best_auc = -1.0;
  double best_hter = 1.0;
  int best_epoch = -1;
  int64_t step = 0;
};

CheckpointState load_checkpoint(const std::string& dir, Models& models, Optimizers& opt,
                                std::mt19937_64& rng);

// Models-only load (for eval / embedding export).
void load_model_weights(const std::string& dir, Models& models);

// Enough structure to rebuild the networks from a checkpoint directory.
struct ModelMeta {
  EncoderConfig encoder;
  bool use_v = true;
  int n_id = 2;
  double am_scale = 30.0;
};

void write_model_meta(const std::string& dir, const ModelMeta& meta);
ModelMeta read_model_meta(const std::string& dir);
Models models_from_meta(const ModelMeta& meta);

// Source entries split into train / held-out-identity validation, plus the
// target-domain entries and the train identity-class map.
struct DataSplit {
  std::vector<ManifestEntry> train, val, target;
  TrainContext ctx;
};

DataSplit split_data(const std::vector<ManifestEntry>& manifest, const TrainConfig& config);

RunResult run_training(const TrainConfig& config, const std::string& data_dir,
                       const std::string& out_dir, const std::string& resume_dir = "");

// History / loss-log serialization (structured text tables).
void write_history(const std::string& path, const std::vector<EpochMetrics>& history);
std::vector<EpochMetrics> read_history(const std::string& path);
void write_loss_log(const std::string& path, const std::vector<StepLosses>& losses);

}  // namespace dlif
