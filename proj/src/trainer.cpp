#include "dlif/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dlif/metrics.hpp"
#include "dlif/tensor_io.hpp"

namespace dlif {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (steps_per_epoch < 1) throw std::invalid_argument("TrainConfig: steps_per_epoch must be >= 1");
  if (lr_halving_period < 1) throw std::invalid_argument("TrainConfig: lr_halving_period must be >= 1");
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw std::invalid_argument("TrainConfig: val_fraction must lie in [0,1)");
  }
  weights.validate();
  encoder.validate();
}

const std::set<std::string>& train_config_keys() {
  static const std::set<std::string> keys = {
      "epochs", "steps_per_epoch", "lr", "lr_halving_period", "weight_decay",
      "tau", "am_scale", "margin_live", "margin_spoof",
      "lambda_aaic_u", "lambda_idamb", "lambda_ortho_u",
      "lambda_aaic_v", "lambda_liamb", "lambda_ortho_v",
      "sc_levels", "sc_mode", "sc_levels_v", "sc_mode_v",
      "aaic_form", "contrast", "triplet_margin", "use_v",
      "input_size", "stage_channels", "feature_dim", "cwsa_enabled", "cwsa_reduction",
      "seed", "selection", "source_domains", "target_domain", "val_fraction", "calib_samples",
      "batch_ids_per_domain", "batch_live_per_id", "batch_spoof_per_id",
      "augment", "augment_min_scale", "augment_max_scale", "augment_rotation_deg",
  };
  return keys;
}

TrainConfig parse_train_config(const KeyValueConfig& cfg) {
  cfg.restrict_keys(train_config_keys());
  TrainConfig c;
  c.epochs = cfg.get_int("epochs", c.epochs);
  c.steps_per_epoch = cfg.get_int("steps_per_epoch", c.steps_per_epoch);
  c.lr = cfg.get_double("lr", c.lr);
  c.lr_halving_period = cfg.get_int("lr_halving_period", c.lr_halving_period);
  c.weight_decay = cfg.get_double("weight_decay", c.weight_decay);
  c.weights.tau = cfg.get_double("tau", c.weights.tau);
  c.weights.am_scale = cfg.get_double("am_scale", c.weights.am_scale);
  c.weights.margin_live = cfg.get_double("margin_live", c.weights.margin_live);
  c.weights.margin_spoof = cfg.get_double("margin_spoof", c.weights.margin_spoof);
  c.weights.aaic_u = cfg.get_double("lambda_aaic_u", c.weights.aaic_u);
  c.weights.idamb = cfg.get_double("lambda_idamb", c.weights.idamb);
  c.weights.ortho_u = cfg.get_double("lambda_ortho_u", c.weights.ortho_u);
  c.weights.aaic_v = cfg.get_double("lambda_aaic_v", c.weights.aaic_v);
  c.weights.liamb = cfg.get_double("lambda_liamb", c.weights.liamb);
  c.weights.ortho_v = cfg.get_double("lambda_ortho_v", c.weights.ortho_v);
  c.plan_u = parse_style_plan(cfg.get_str("sc_levels", "M,H"), cfg.get_str("sc_mode", "parallel"));
  c.plan_v = parse_style_plan(cfg.get_str("sc_levels_v", "M,H"), cfg.get_str("sc_mode_v", "parallel"));
  const std::string form = cfg.get_str("aaic_form", "as_written");
  if (form == "as_written") {
    c.aaic_form = AaicForm::as_written;
  } else if (form == "log") {
    c.aaic_form = AaicForm::log_form;
  } else {
    throw std::runtime_error("config: aaic_form must be as_written or log");
  }
  const std::string contrast = cfg.get_str("contrast", "aaic");
  if (contrast == "aaic") {
    c.contrast = TrainConfig::Contrast::aaic;
  } else if (contrast == "binary") {
    c.contrast = TrainConfig::Contrast::binary;
  } else if (contrast == "triplet") {
    c.contrast = TrainConfig::Contrast::triplet;
  } else {
    throw std::runtime_error("config: contrast must be aaic, binary or triplet");
  }
  c.triplet_margin = cfg.get_double("triplet_margin", c.triplet_margin);
  c.use_v = cfg.get_bool("use_v", c.use_v);
  c.encoder.input_size = cfg.get_int("input_size", c.encoder.input_size);
  auto chans = cfg.get_int_list("stage_channels", {c.encoder.stage_channels[0],
                                                   c.encoder.stage_channels[1],
                                                   c.encoder.stage_channels[2]});
  if (chans.size() != 3) throw std::runtime_error("config: stage_channels needs three values");
  c.encoder.stage_channels = {chans[0], chans[1], chans[2]};
  c.encoder.feature_dim = cfg.get_int("feature_dim", chans[2]);
  c.encoder.cwsa_enabled = cfg.get_bool("cwsa_enabled", true);
  c.encoder.cwsa_reduction = cfg.get_int("cwsa_reduction", c.encoder.cwsa_reduction);
  c.seed = cfg.get_u64("seed", c.seed);
  const std::string sel = cfg.get_str("selection", "source_val");
  if (sel == "source_val") {
    c.selection = TrainConfig::Selection::source_val;
  } else if (sel == "target_eval") {
    c.selection = TrainConfig::Selection::target_eval;
  } else {
    throw std::runtime_error("config: selection must be source_val or target_eval");
  }
  c.source_domains = cfg.get_int_list("source_domains", c.source_domains);
  c.target_domain = cfg.get_int("target_domain", c.target_domain);
  c.val_fraction = cfg.get_double("val_fraction", c.val_fraction);
  c.calib_samples = cfg.get_int("calib_samples", c.calib_samples);
  c.batch_ids_per_domain = cfg.get_int("batch_ids_per_domain", c.batch_ids_per_domain);
  c.batch_live_per_id = cfg.get_int("batch_live_per_id", c.batch_live_per_id);
  c.batch_spoof_per_id = cfg.get_int("batch_spoof_per_id", c.batch_spoof_per_id);
  c.augment.enabled = cfg.get_bool("augment", true);
  c.augment.min_scale = cfg.get_double("augment_min_scale", c.augment.min_scale);
  c.augment.max_scale = cfg.get_double("augment_max_scale", c.augment.max_scale);
  c.augment.max_rotation_deg = cfg.get_double("augment_rotation_deg", c.augment.max_rotation_deg);
  c.validate();
  return c;
}

double lr_for_epoch(double lr0, int epoch, int period) {
  return lr0 * std::pow(0.5, epoch / period);
}

std::vector<std::pair<std::string, Tensor>> Models::named() const {
  auto out = enc_u.named("u");
  out.emplace_back("c.weight", head_c.weight);
  if (has_v) {
    auto v = enc_v.named("v");
    out.insert(out.end(), v.begin(), v.end());
    out.emplace_back("d.weight", head_d.weight);
  }
  return out;
}

std::vector<Tensor> Models::params_u() const { return enc_u.all(); }
std::vector<Tensor> Models::params_v() const { return has_v ? enc_v.all() : std::vector<Tensor>{}; }

Models init_models(const TrainConfig& config, int n_id, std::mt19937_64& rng) {
  Models m;
  EncoderConfig cfg_u = config.encoder;
  m.enc_u = init_encoder(cfg_u, rng);
  m.head_c = init_head({HeadConfig::classifier, 2, cfg_u.feature_dim}, rng);
  m.has_v = config.use_v;
  if (config.use_v) {
    EncoderConfig cfg_v = config.encoder;
    cfg_v.cwsa_enabled = false;  // gate sits on the liveness branch only
    m.enc_v = init_encoder(cfg_v, rng);
    m.head_d = init_head({HeadConfig::discriminator, std::max(2, n_id), cfg_v.feature_dim}, rng);
  }
  return m;
}

AdamState make_adam_state(const std::vector<Tensor>& params) {
  AdamState st;
  for (const auto& p : params) {
    st.m.emplace_back(p->data.size(), 0.0);
    st.v.emplace_back(p->data.size(), 0.0);
  }
  return st;
}

void adam_step(const std::vector<Tensor>& params, AdamState& state, double lr, double beta1,
               double beta2, double eps, double weight_decay) {
  if (params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: state does not match parameter list");
  }
  state.t++;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    p->ensure_grad();
    if (p->grad.size() != p->data.size() || state.m[k].size() != p->data.size()) {
      throw std::invalid_argument("adam_step: buffer shape mismatch for parameter " + std::to_string(k));
    }
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (size_t i = 0; i < p->data.size(); ++i) {
      const double g = p->grad[i];
      p->data[i] -= lr * weight_decay * p->data[i];  // decoupled decay
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      p->data[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

Optimizers make_optimizers(const Models& m) {
  Optimizers opt;
  opt.u = make_adam_state(m.params_u());
  opt.c = make_adam_state(m.params_c());
  if (m.has_v) {
    opt.v = make_adam_state(m.params_v());
    opt.d = make_adam_state(m.params_d());
  }
  return opt;
}

LevelPairings draw_pairings(const StylePlan& plan, const std::vector<int>& group_labels,
                            std::mt19937_64& rng) {
  LevelPairings p;
  p.group_labels = group_labels;
  for (Level l : plan.active_levels) p.perms[l] = make_pairing(group_labels, rng);
  return p;
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

Tensor pool_views(const Tensor& original, const std::vector<Tensor>& augmented) {
  std::vector<Tensor> views{original};
  views.insert(views.end(), augmented.begin(), augmented.end());
  return views.size() == 1 ? original : concat(views, 0);
}

std::vector<int> repeat_labels(const std::vector<int>& labels, int sets) {
  std::vector<int> out;
  out.reserve(labels.size() * sets);
  for (int s = 0; s < sets; ++s) out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

}  // namespace

PhaseAResult train_phase_fas(Models& models, Optimizers& opt, const Batch& batch,
                             const TrainConfig& config, double lr, const LevelPairings& pair_u,
                             StepLosses& rec) {
  const auto& w = config.weights;
  PhaseAResult out;

  EncodeResult enc_u = encode(models.enc_u, batch.images, nullptr, nullptr);
  Tensor f_u = enc_u.features[0];
  if (models.has_v) {
    // V's clean forward is built once; phase A only ever sees it detached.
    out.f_v_graph = encode(models.enc_v, batch.images, nullptr, nullptr).features[0];
  }

  HeadOutput c_out = head_forward(models.head_c, f_u, w.am_scale);
  FasLossParts fas;
  fas.cls = asym_am_softmax(c_out.cosines, batch.liveness, w.am_scale, w.margin_live, w.margin_spoof);

  std::vector<Tensor> aug_u;
  if (config.plan_u.enabled()) {
    aug_u = encode(models.enc_u, batch.images, &config.plan_u, &pair_u).features;
  }
  Tensor views_u = pool_views(f_u, aug_u);
  const int sets_u = 1 + static_cast<int>(aug_u.size());
  switch (config.contrast) {
    case TrainConfig::Contrast::aaic: {
      ContrastLabeling labels = fas_contrast_labels(batch.liveness, sets_u - 1);
      fas.aaic = aaic_loss(views_u, labels, w.tau, config.aaic_form);
      break;
    }
    case TrainConfig::Contrast::binary:
      fas.aaic = binary_contrast_loss(views_u, repeat_labels(batch.liveness, sets_u), w.tau);
      break;
    case TrainConfig::Contrast::triplet:
      fas.aaic = triplet_contrast_loss(views_u, repeat_labels(batch.liveness, sets_u),
                                       config.triplet_margin);
      break;
  }

  if (models.has_v) {
    HeadOutput d_on_u = head_forward(models.head_d, f_u, 1.0, /*frozen=*/true);
    fas.idamb = ambiguity_loss(d_on_u.probs);
    fas.ortho = orthogonality_loss(l2_normalize(f_u, 1), l2_normalize(detach(out.f_v_graph), 1));
  }
  Tensor l_fas = compose_fas_loss(fas, w);

  auto pu = models.params_u();
  auto pc = models.params_c();
  zero_all_grads(pu);
  zero_all_grads(pc);
  backward(l_fas);
  adam_step(pu, opt.u, lr, kBeta1, kBeta2, kAdamEps, config.weight_decay);
  adam_step(pc, opt.c, lr, kBeta1, kBeta2, kAdamEps, config.weight_decay);

  rec.cls = fas.cls->scalar();
  rec.aaic_u = fas.aaic ? fas.aaic->scalar() : 0.0;
  rec.idamb = fas.idamb ? fas.idamb->scalar() : 0.0;
  rec.ortho_u = fas.ortho ? fas.ortho->scalar() : 0.0;
  rec.fas = l_fas->scalar();

  // Phase B reuses the pre-update liveness features, matching the
  // sample-once, compute-both, update-both order of the optimization loop.
  out.f_u = detach(f_u);
  return out;
}

void train_phase_fr(Models& models, Optimizers& opt, const Batch& batch, const TrainContext& ctx,
                    const TrainConfig& config, double lr, const LevelPairings& pair_v,
                    const PhaseAResult& phase_a, StepLosses& rec) {
  const auto& w = config.weights;

  std::vector<int> id_class(batch.identity.size());
  for (size_t i = 0; i < batch.identity.size(); ++i) {
    auto it = ctx.id_class.find(batch.identity[i]);
    if (it == ctx.id_class.end()) {
      throw std::runtime_error("train_step: identity " + std::to_string(batch.identity[i]) +
                               " missing from the training id map");
    }
    id_class[i] = it->second;
  }

  Tensor f_v = phase_a.f_v_graph;
  HeadOutput d_out = head_forward(models.head_d, f_v, 1.0);
  FrLossParts fr;
  fr.id = cross_entropy(d_out.probs, id_class);

  std::vector<Tensor> aug_v;
  if (config.plan_v.enabled()) {
    aug_v = encode(models.enc_v, batch.images, &config.plan_v, &pair_v).features;
  }
  Tensor views_v = pool_views(f_v, aug_v);
  ContrastLabeling labels_v = fr_contrast_labels(batch.identity, static_cast<int>(aug_v.size()));
  fr.aaic = aaic_loss(views_v, labels_v, w.tau, config.aaic_form);

  HeadOutput c_on_v = head_forward(models.head_c, f_v, 1.0, /*frozen=*/true);
  fr.liamb = ambiguity_loss(c_on_v.probs);
  fr.ortho = orthogonality_loss(l2_normalize(phase_a.f_u, 1), l2_normalize(f_v, 1));
  Tensor l_fr = compose_fr_loss(fr, w);

  auto pv = models.params_v();
  auto pd = models.params_d();
  zero_all_grads(pv);
  zero_all_grads(pd);
  backward(l_fr);
  adam_step(pv, opt.v, lr, kBeta1, kBeta2, kAdamEps, config.weight_decay);
  adam_step(pd, opt.d, lr, kBeta1, kBeta2, kAdamEps, config.weight_decay);

  rec.id = fr.id->scalar();
  rec.aaic_v = fr.aaic->scalar();
  rec.liamb = fr.liamb->scalar();
  rec.ortho_v = fr.ortho->scalar();
  rec.fr = l_fr->scalar();
}

StepLosses train_step(Models& models, Optimizers& opt, const Batch& batch, const TrainContext& ctx,
                      const TrainConfig& config, double lr, std::mt19937_64& rng) {
  StepLosses rec;
  // Pairings are drawn in a fixed order so runs are reproducible.
  LevelPairings pair_u, pair_v;
  if (config.plan_u.enabled()) pair_u = draw_pairings(config.plan_u, batch.liveness, rng);
  if (models.has_v && config.plan_v.enabled()) {
    pair_v = draw_pairings(config.plan_v, batch.identity, rng);
  }
  PhaseAResult a = train_phase_fas(models, opt, batch, config, lr, pair_u, rec);
  if (models.has_v) train_phase_fr(models, opt, batch, ctx, config, lr, pair_v, a, rec);
  return rec;
}

std::vector<double> liveness_scores(const Models& models, const Tensor& images,
                                    const TrainConfig& config) {
  EncodeResult enc = encode(models.enc_u, images, nullptr, nullptr);
  HeadOutput out = head_forward(models.head_c, enc.features[0], config.weights.am_scale);
  const int b = out.probs->dim(0);
  std::vector<double> scores(b);
  for (int i = 0; i < b; ++i) scores[i] = out.probs->data[static_cast<int64_t>(i) * 2 + 1];
  return scores;
}

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_from_string(const std::string& s, std::mt19937_64& rng) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw std::runtime_error("checkpoint: cannot parse rng state");
}

std::vector<std::pair<std::string, Tensor>> checkpoint_tensors(const Models& models,
                                                               const Optimizers& opt) {
  auto out = models.named();
  auto add_moments = [&out](const std::string& prefix, const std::vector<Tensor>& params,
                            const AdamState& st) {
    for (size_t k = 0; k < params.size(); ++k) {
      out.emplace_back("adam.m." + prefix + std::to_string(k),
                       make_tensor(params[k]->shape, st.m[k]));
      out.emplace_back("adam.v." + prefix + std::to_string(k),
                       make_tensor(params[k]->shape, st.v[k]));
    }
  };
  add_moments("u.", models.params_u(), opt.u);
  add_moments("c.", models.params_c(), opt.c);
  if (models.has_v) {
    add_moments("v.", models.params_v(), opt.v);
    add_moments("d.", models.params_d(), opt.d);
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string& dir, const Models& models, const Optimizers& opt, int epoch,
                     double lr, double best_auc, double best_hter, int best_epoch, int64_t step,
                     const std::mt19937_64& rng) {
  // Round the live training state to f32 first: DLIF1 stores f32, and this
  // keeps "continue in process" and "resume from disk" bit-identical.
  auto round_state = [](const std::vector<Tensor>& params, AdamState& st) {
    for (size_t k = 0; k < params.size(); ++k) {
      truncate_to_f32(params[k]);
      for (double& x : st.m[k]) x = static_cast<double>(static_cast<float>(x));
      for (double& x : st.v[k]) x = static_cast<double>(static_cast<float>(x));
    }
  };
  auto& mu = const_cast<Models&>(models);
  auto& ou = const_cast<Optimizers&>(opt);
  round_state(mu.params_u(), ou.u);
  round_state(mu.params_c(), ou.c);
  if (models.has_v) {
    round_state(mu.params_v(), ou.v);
    round_state(mu.params_d(), ou.d);
  }

  save_tensor_dir(dir, checkpoint_tensors(models, opt));
  std::ofstream os(dir + "/state.txt");
  if (!os) throw std::runtime_error("save_checkpoint: cannot open state file in " + dir);
  os << "epoch = " << epoch << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", lr);
  os << "lr = " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", best_auc);
  os << "best_auc = " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", best_hter);
  os << "best_hter = " << buf << "\n";
  os << "best_epoch = " << best_epoch << "\n";
  os << "step = " << step << "\n";
  os << "adam_t = " << opt.u.t << "," << opt.c.t << "," << opt.v.t << "," << opt.d.t << "\n";
  os << "rng = " << rng_to_string(rng) << "\n";
}

namespace {

void assign_from(const std::map<std::string, Tensor>& loaded, const std::string& name,
                 const Tensor& dst) {
  auto it = loaded.find(name);
  if (it == loaded.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
  if (it->second->shape != dst->shape) {
    throw std::runtime_error("checkpoint: tensor " + name + " has shape " +
                             shape_str(it->second->shape) + ", expected " + shape_str(dst->shape));
  }
  dst->data = it->second->data;
}

void load_moments(const std::map<std::string, Tensor>& loaded, const std::string& prefix,
                  const std::vector<Tensor>& params, AdamState& st) {
  for (size_t k = 0; k < params.size(); ++k) {
    const std::string mk = "adam.m." + prefix + std::to_string(k);
    const std::string vk = "adam.v." + prefix + std::to_string(k);
    auto mi = loaded.find(mk);
    auto vi = loaded.find(vk);
    if (mi == loaded.end() || vi == loaded.end()) {
      throw std::runtime_error("checkpoint: missing optimizer moments " + mk);
    }
    st.m[k] = mi->second->data;
    st.v[k] = vi->second->data;
  }
}

}  // namespace

void load_model_weights(const std::string& dir, Models& models) {
  std::map<std::string, Tensor> loaded;
  for (auto& [name, t] : load_tensor_dir(dir)) loaded[name] = t;
  for (auto& [name, t] : models.named()) assign_from(loaded, name, t);
}

CheckpointState load_checkpoint(const std::string& dir, Models& models, Optimizers& opt,
                                std::mt19937_64& rng) {
  load_model_weights(dir, models);
  std::map<std::string, Tensor> loaded;
  for (auto& [name, t] : load_tensor_dir(dir)) loaded[name] = t;
  load_moments(loaded, "u.", models.params_u(), opt.u);
  load_moments(loaded, "c.", models.params_c(), opt.c);
  if (models.has_v) {
    load_moments(loaded, "v.", models.params_v(), opt.v);
    load_moments(loaded, "d.", models.params_d(), opt.d);
  }

  KeyValueConfig state = KeyValueConfig::from_file(dir + "/state.txt");
  CheckpointState cs;
  cs.epoch = state.get_int("epoch", 0);
  cs.lr = state.get_double("lr", 0.0);
  cs.best_auc = state.get_double("best_auc", -1.0);
  cs.best_hter = state.get_double("best_hter", 1.0);
  cs.best_epoch = state.get_int("best_epoch", -1);
  cs.step = state.get_int("step", 0);
  auto ts = state.get_int_list("adam_t", {0, 0, 0, 0});
  if (ts.size() == 4) {
    opt.u.t = ts[0];
    opt.c.t = ts[1];
    opt.v.t = ts[2];
    opt.d.t = ts[3];
  }
  rng_from_string(state.get_str("rng", ""), rng);
  return cs;
}

void write_model_meta(const std::string& dir, const ModelMeta& meta) {
  std::ofstream os(dir + "/model.txt");
  if (!os) throw std::runtime_error("write_model_meta: cannot open model.txt in " + dir);
  os << "input_size = " << meta.encoder.input_size << "\n";
  os << "stage_channels = " << meta.encoder.stage_channels[0] << "," << meta.encoder.stage_channels[1]
     << "," << meta.encoder.stage_channels[2] << "\n";
  os << "feature_dim = " << meta.encoder.feature_dim << "\n";
  os << "cwsa_enabled = " << (meta.encoder.cwsa_enabled ? "true" : "false") << "\n";
  os << "cwsa_reduction = " << meta.encoder.cwsa_reduction << "\n";
  os << "use_v = " << (meta.use_v ? "true" : "false") << "\n";
  os << "n_id = " << meta.n_id << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", meta.am_scale);
  os << "am_scale = " << buf << "\n";
}

ModelMeta read_model_meta(const std::string& dir) {
  KeyValueConfig cfg = KeyValueConfig::from_file(dir + "/model.txt");
  ModelMeta meta;
  meta.encoder.input_size = cfg.get_int("input_size", 32);
  auto ch = cfg.get_int_list("stage_channels", {16, 32, 64});
  meta.encoder.stage_channels = {ch[0], ch[1], ch[2]};
  meta.encoder.feature_dim = cfg.get_int("feature_dim", ch[2]);
  meta.encoder.cwsa_enabled = cfg.get_bool("cwsa_enabled", true);
  meta.encoder.cwsa_reduction = cfg.get_int("cwsa_reduction", 4);
  meta.use_v = cfg.get_bool("use_v", true);
  meta.n_id = cfg.get_int("n_id", 2);
  meta.am_scale = cfg.get_double("am_scale", 30.0);
  return meta;
}

Models models_from_meta(const ModelMeta& meta) {
  TrainConfig stub;
  stub.encoder = meta.encoder;
  stub.use_v = meta.use_v;
  stub.weights.am_scale = meta.am_scale;
  std::mt19937_64 rng(0);
  return init_models(stub, meta.n_id, rng);
}

DataSplit split_data(const std::vector<ManifestEntry>& manifest, const TrainConfig& config) {
  DataSplit out;
  std::set<int> source_set(config.source_domains.begin(), config.source_domains.end());
  std::map<int, std::set<int>> ids_by_domain;
  for (const auto& e : manifest) {
    if (source_set.count(e.domain_tag)) ids_by_domain[e.domain_tag].insert(e.identity_id);
  }
  // Hold out the top val_fraction of each source domain's sorted ids.
  std::set<int> val_ids;
  for (const auto& [domain, ids] : ids_by_domain) {
    (void)domain;
    const int n = static_cast<int>(ids.size());
    int hold = static_cast<int>(std::lround(n * config.val_fraction));
    if (config.val_fraction > 0.0) hold = std::max(hold, 1);
    hold = std::min(hold, n - 1);
    auto it = ids.rbegin();
    for (int k = 0; k < hold; ++k, ++it) val_ids.insert(*it);
  }
  for (const auto& e : manifest) {
    if (source_set.count(e.domain_tag)) {
      if (val_ids.count(e.identity_id)) {
        out.val.push_back(e);
      } else {
        out.train.push_back(e);
      }
    } else if (e.domain_tag == config.target_domain) {
      out.target.push_back(e);
    }
  }
  std::set<int> train_ids;
  for (const auto& e : out.train) train_ids.insert(e.identity_id);
  int next = 0;
  for (int id : train_ids) out.ctx.id_class[id] = next++;
  out.ctx.n_id = next;
  return out;
}

void write_history(const std::string& path, const std::vector<EpochMetrics>& history) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_history: cannot open " + path);
  os << "epoch, split, HTER, AUC, threshold\n";
  char buf[128];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof(buf), "%d, %s, %.17g, %.17g, %.17g", h.epoch, h.split.c_str(), h.hter,
                  h.auc, h.threshold);
    os << buf << "\n";
  }
}

std::vector<EpochMetrics> read_history(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_history: cannot open " + path);
  std::vector<EpochMetrics> out;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    EpochMetrics m;
    std::string cell;
    std::getline(ls, cell, ',');
    m.epoch = std::stoi(cell);
    std::getline(ls, cell, ',');
    const size_t a = cell.find_first_not_of(' ');
    m.split = cell.substr(a);
    std::getline(ls, cell, ',');
    m.hter = std::stod(cell);
    std::getline(ls, cell, ',');
    m.auc = std::stod(cell);
    std::getline(ls, cell, ',');
    m.threshold = std::stod(cell);
    out.push_back(std::move(m));
  }
  return out;
}

void write_loss_log(const std::string& path, const std::vector<StepLosses>& losses) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_loss_log: cannot open " + path);
  os << "step, L_cls, L_aaicU, L_idamb, L_orthoU, L_FAS, L_id, L_aaicV, L_liamb, L_orthoV, L_FR\n";
  char buf[512];
  for (const auto& l : losses) {
    std::snprintf(buf, sizeof(buf),
                  "%lld, %.12g, %.12g, %.12g, %.12g, %.12g, %.12g, %.12g, %.12g, %.12g, %.12g",
                  static_cast<long long>(l.step), l.cls, l.aaic_u, l.idamb, l.ortho_u, l.fas, l.id,
                  l.aaic_v, l.liamb, l.ortho_v, l.fr);
    os << buf << "\n";
  }
}

RunResult run_training(const TrainConfig& config, const std::string& data_dir,
                       const std::string& out_dir, const std::string& resume_dir) {
  config.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  auto manifest = load_manifest(data_dir + "/manifest.txt");
  DataSplit split = split_data(manifest, config);
  if (split.train.empty()) throw std::runtime_error("run_training: no training data after split");

  const int s = config.encoder.input_size;
  Batch val_batch, target_batch;
  if (config.selection == TrainConfig::Selection::source_val) {
    if (split.val.empty()) throw std::runtime_error("run_training: empty validation split");
    val_batch = load_all(split.val, data_dir, s);
  } else {
    if (split.target.empty()) {
      throw std::runtime_error("run_training: target_eval selection needs target-domain data");
    }
    target_batch = load_all(split.target, data_dir, s);
  }

  // Fixed calibration subsample of the train split for the HTER threshold.
  std::vector<ManifestEntry> calib_entries = split.train;
  {
    std::mt19937_64 calib_rng(config.seed ^ 0xca11b5eedULL);
    std::shuffle(calib_entries.begin(), calib_entries.end(), calib_rng);
    if (static_cast<int>(calib_entries.size()) > config.calib_samples) {
      calib_entries.resize(config.calib_samples);
    }
  }
  Batch calib_batch = load_all(calib_entries, data_dir, s);

  std::mt19937_64 rng(config.seed);
  Models models = init_models(config, split.ctx.n_id, rng);
  Optimizers opt = make_optimizers(models);

  RunResult result;
  result.best_checkpoint = out_dir + "/checkpoint_best";
  result.last_checkpoint = out_dir + "/checkpoint_last";

  int start_epoch = 0;
  int64_t step_count = 0;
  if (!resume_dir.empty()) {
    CheckpointState cs = load_checkpoint(resume_dir, models, opt, rng);
    start_epoch = cs.epoch;
    step_count = cs.step;
    result.best_auc = cs.best_auc;
    result.best_hter = cs.best_hter;
    result.best_epoch = cs.best_epoch;
    const std::string hist = resume_dir + "/../history.txt";
    if (fs::exists(hist)) result.history = read_history(hist);
  }

  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_for_epoch(config.lr, epoch, config.lr_halving_period);
    for (int step = 0; step < config.steps_per_epoch; ++step) {
      Batch batch = sample_batch(split.train, data_dir, rng, config.batch_ids_per_domain,
                                 config.batch_live_per_id, config.batch_spoof_per_id,
                                 config.augment, s);
      StepLosses losses = train_step(models, opt, batch, split.ctx, config, lr, rng);
      losses.step = ++step_count;
      result.losses.push_back(losses);
    }

    const Batch& eval_batch =
        config.selection == TrainConfig::Selection::source_val ? val_batch : target_batch;
    ScoreSet eval_set{liveness_scores(models, eval_batch.images, config), eval_batch.liveness};
    ScoreSet calib_set{liveness_scores(models, calib_batch.images, config), calib_batch.liveness};
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.split = config.selection == TrainConfig::Selection::source_val ? "source_val" : "target";
    m.threshold = eer_threshold(calib_set).threshold;
    m.hter = hter(eval_set, m.threshold);
    m.auc = roc_auc(eval_set);
    result.history.push_back(m);

    const bool better =
        m.auc > result.best_auc || (m.auc == result.best_auc && m.hter < result.best_hter);
    if (better) {
      result.best_auc = m.auc;
      result.best_hter = m.hter;
      result.best_epoch = m.epoch;
    }
    ModelMeta meta{config.encoder, models.has_v, split.ctx.n_id, config.weights.am_scale};
    save_checkpoint(result.last_checkpoint, models, opt, epoch + 1, lr, result.best_auc,
                    result.best_hter, result.best_epoch, step_count, rng);
    write_model_meta(result.last_checkpoint, meta);
    if (better) {
      save_checkpoint(result.best_checkpoint, models, opt, epoch + 1, lr, result.best_auc,
                      result.best_hter, result.best_epoch, step_count, rng);
      write_model_meta(result.best_checkpoint, meta);
    }

    write_history(out_dir + "/history.txt", result.history);
    write_loss_log(out_dir + "/losses.txt", result.losses);
  }
  return result;
}

}  // namespace dlif
