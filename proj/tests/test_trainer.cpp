#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "dlif/synthdata.hpp"
#include "dlif/trainer.hpp"
#include "helpers.hpp"

using namespace dlif;
using dlif_test::bit_equal;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("trainer");

namespace {

std::string temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("dlif_train_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.encoder.input_size = 16;
  c.encoder.stage_channels = {4, 6, 8};
  c.encoder.feature_dim = 8;
  c.encoder.cwsa_enabled = true;
  c.encoder.cwsa_reduction = 2;
  c.plan_u = parse_style_plan("M,H", "parallel");
  c.plan_v = parse_style_plan("M,H", "parallel");
  c.epochs = 2;
  c.steps_per_epoch = 2;
  c.batch_ids_per_domain = 2;
  c.batch_live_per_id = 2;
  c.batch_spoof_per_id = 2;
  c.calib_samples = 32;
  c.seed = 5;
  return c;
}

// Bright live / dark spoof blobs, trivially separable.
Batch toy_batch(int n_per_class, int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::vector<double> data;
  Batch b;
  for (int i = 0; i < 2 * n_per_class; ++i) {
    const int live = i < n_per_class ? 1 : 0;
    const double base = live ? 0.8 : 0.2;
    for (int k = 0; k < 3 * size * size; ++k) data.push_back(base + jitter(rng));
    b.liveness.push_back(live);
    b.identity.push_back(i % 2 == 0 ? 0 : 1);
    b.domain.push_back(0);
  }
  b.images = make_tensor({2 * n_per_class, 3, size, size}, std::move(data));
  return b;
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.push_back(p->data);
  return out;
}

bool equals_snapshot(const std::vector<Tensor>& params,
                     const std::vector<std::vector<double>>& snap) {
  for (size_t i = 0; i < params.size(); ++i) {
    if (!bit_equal(params[i]->data, snap[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adam leaves parameters alone when gradients and decay are zero") {
  Tensor p = make_tensor({3}, {1.0, -2.0, 0.5}, true);
  p->ensure_grad();
  AdamState st = make_adam_state({p});
  const std::vector<double> before = p->data;
  adam_step({p}, st, 1e-3, 0.9, 0.999, 1e-8, 0.0);
  CHECK(bit_equal(p->data, before));
}

TEST_CASE("first adam step matches the closed-form bias-corrected update") {
  const double g = 0.37, lr = 1e-3, eps = 1e-8;
  Tensor p = make_tensor({1}, {2.0}, true);
  p->ensure_grad();
  p->grad[0] = g;
  AdamState st = make_adam_state({p});
  adam_step({p}, st, lr, 0.9, 0.999, eps, 0.0);
  // m_hat = g, v_hat = g^2  ->  delta = -lr * g / (|g| + eps)
  const double expect = 2.0 - lr * g / (std::fabs(g) + eps);
  CHECK(p->data[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("constant gradients drive the adam step size to lr") {
  const double g = 0.01, lr = 1e-3;
  Tensor p = make_tensor({1}, {0.0}, true);
  p->ensure_grad();
  AdamState st = make_adam_state({p});
  double prev = 0.0, delta = 0.0;
  for (int t = 0; t < 500; ++t) {
    p->grad[0] = g;
    prev = p->data[0];
    adam_step({p}, st, lr, 0.9, 0.999, 1e-8, 0.0);
    delta = std::fabs(p->data[0] - prev);
  }
  CHECK(std::fabs(delta - lr) / lr < 0.01);
}

TEST_CASE("decoupled weight decay shrinks before the update") {
  Tensor p = make_tensor({1}, {1.0}, true);
  p->ensure_grad();  // zero grad
  AdamState st = make_adam_state({p});
  adam_step({p}, st, 0.1, 0.9, 0.999, 1e-8, 0.5);
  CHECK(p->data[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-12));
}

TEST_CASE("lr schedule halves exactly on the period") {
  CHECK(lr_for_epoch(5e-4, 0, 50) == 5e-4);
  CHECK(lr_for_epoch(5e-4, 49, 50) == 5e-4);
  CHECK(lr_for_epoch(5e-4, 50, 50) == 2.5e-4);
  CHECK(lr_for_epoch(5e-4, 99, 50) == 2.5e-4);
  CHECK(lr_for_epoch(5e-4, 119, 50) == 1.25e-4);
  CHECK(lr_for_epoch(5e-4, 120, 50) == 1.25e-4);  // two halvings at 50 and 100
  CHECK(lr_for_epoch(5e-4, 200, 50) == 5e-4 / 16.0);
}

TEST_CASE("phase A leaves V and D bit-identical, phase B leaves U and C") {
  std::mt19937_64 rng(100);
  TrainConfig config = tiny_train_config();
  Models models = init_models(config, 2, rng);
  Optimizers opt = make_optimizers(models);
  Batch batch = toy_batch(4, 16, rng);
  TrainContext ctx;
  ctx.id_class = {{0, 0}, {1, 1}};
  ctx.n_id = 2;

  for (int step = 0; step < 5; ++step) {
    LevelPairings pair_u = draw_pairings(config.plan_u, batch.liveness, rng);
    LevelPairings pair_v = draw_pairings(config.plan_v, batch.identity, rng);

    auto v_before = snapshot(models.params_v());
    auto d_before = snapshot(models.params_d());
    StepLosses rec;
    PhaseAResult a = train_phase_fas(models, opt, batch, config, 1e-3, pair_u, rec);
    CHECK(equals_snapshot(models.params_v(), v_before));
    CHECK(equals_snapshot(models.params_d(), d_before));

    auto u_before = snapshot(models.params_u());
    auto c_before = snapshot(models.params_c());
    train_phase_fr(models, opt, batch, ctx, config, 1e-3, pair_v, a, rec);
    CHECK(equals_snapshot(models.params_u(), u_before));
    CHECK(equals_snapshot(models.params_c(), c_before));
  }
}

TEST_CASE("with zero loss weights phase A is pure classification descent") {
  std::mt19937_64 rng(101);
  TrainConfig config = tiny_train_config();
  config.use_v = false;
  config.plan_u = StylePlan{};  // no augmentation
  config.weights.aaic_u = 0.0;
  config.weights.idamb = 0.0;
  config.weights.ortho_u = 0.0;
  Models models = init_models(config, 2, rng);
  Optimizers opt = make_optimizers(models);
  Batch batch = toy_batch(4, 16, rng);
  TrainContext ctx;

  double first = 0.0, last = 0.0;
  for (int step = 0; step < 50; ++step) {
    StepLosses rec = train_step(models, opt, batch, ctx, config, 1e-3, rng);
    CHECK(rec.fas == rec.cls);  // composite collapses to the margin softmax term
    if (step == 0) first = rec.cls;
    last = rec.cls;
  }
  CHECK(last < first);
}

TEST_CASE("identical seeds give bit-identical parameters after ten steps") {
  TrainConfig config = tiny_train_config();
  auto run = [&config]() {
    std::mt19937_64 rng(77);
    Models models = init_models(config, 2, rng);
    Optimizers opt = make_optimizers(models);
    Batch batch = toy_batch(4, 16, rng);
    TrainContext ctx;
    ctx.id_class = {{0, 0}, {1, 1}};
    ctx.n_id = 2;
    for (int step = 0; step < 10; ++step) {
      train_step(models, opt, batch, ctx, config, 1e-3, rng);
    }
    return models;
  };
  Models a = run();
  Models b = run();
  auto na = a.named();
  auto nb = b.named();
  REQUIRE(na.size() == nb.size());
  for (size_t i = 0; i < na.size(); ++i) CHECK(bit_equal(na[i].second->data, nb[i].second->data));
}

TEST_CASE("non-finite loss terms abort the step with the term name") {
  std::mt19937_64 rng(102);
  TrainConfig config = tiny_train_config();
  config.use_v = false;
  config.plan_u = StylePlan{};
  Models models = init_models(config, 2, rng);
  // poison the classifier weights
  for (double& v : models.head_c.weight->data) v = std::numeric_limits<double>::quiet_NaN();
  Optimizers opt = make_optimizers(models);
  Batch batch = toy_batch(2, 16, rng);
  TrainContext ctx;
  CHECK_THROWS_AS(train_step(models, opt, batch, ctx, config, 1e-3, rng), std::domain_error);
}

TEST_CASE("checkpoint state and rng stream survive a round trip") {
  const std::string dir = temp_dir("ckpt");
  std::mt19937_64 rng(103);
  TrainConfig config = tiny_train_config();
  Models models = init_models(config, 2, rng);
  Optimizers opt = make_optimizers(models);
  opt.u.t = 7;
  opt.c.t = 7;
  opt.v.t = 7;
  opt.d.t = 7;

  std::mt19937_64 saved_rng = rng;
  save_checkpoint(dir, models, opt, 3, 2.5e-4, 0.91, 0.08, 2, 42, saved_rng);
  write_model_meta(dir, {config.encoder, true, 2, config.weights.am_scale});

  std::mt19937_64 rng2(1);
  ModelMeta meta = read_model_meta(dir);
  Models restored = models_from_meta(meta);
  Optimizers opt2 = make_optimizers(restored);
  CheckpointState cs = load_checkpoint(dir, restored, opt2, rng2);

  CHECK(cs.epoch == 3);
  CHECK(cs.lr == 2.5e-4);
  CHECK(cs.best_auc == doctest::Approx(0.91).epsilon(1e-12));
  CHECK(cs.best_epoch == 2);
  CHECK(cs.step == 42);
  CHECK(opt2.u.t == 7);
  // saving rounded the live state to f32, so the reload is bit-identical
  auto na = models.named();
  auto nb = restored.named();
  for (size_t i = 0; i < na.size(); ++i) CHECK(bit_equal(na[i].second->data, nb[i].second->data));
  // rng stream continues identically
  for (int k = 0; k < 16; ++k) CHECK(saved_rng() == rng2());
  fs::remove_all(dir);
}

TEST_CASE("short training run: selection isolation, monotone best, smoke descent") {
  const std::string data = temp_dir("rundata");
  DatasetSpec spec;
  spec.n_domains = 2;  // only source domains; no target data anywhere
  spec.ids_per_domain = 6;
  spec.live_per_id = 4;
  spec.spoof_per_id = 4;
  spec.image_size = 16;
  spec.seed = 11;
  generate_dataset(spec, data);

  const std::string out = temp_dir("runout");
  TrainConfig config = tiny_train_config();
  config.epochs = 5;
  config.steps_per_epoch = 2;
  config.source_domains = {0, 1};
  config.target_domain = 9;  // absent on purpose
  config.selection = TrainConfig::Selection::source_val;

  RunResult result = run_training(config, data, out);
  REQUIRE(static_cast<int>(result.history.size()) == 5);

  // best AUC is the running maximum of the history
  double running = -1.0;
  for (const auto& h : result.history) running = std::max(running, h.auc);
  CHECK(result.best_auc == running);

  // the AUC history is not stuck at chance
  bool non_degenerate = false;
  for (const auto& h : result.history) non_degenerate = non_degenerate || h.auc != 0.5;
  CHECK(non_degenerate);

  // classification loss moved downward over the run
  CHECK(result.losses.back().cls < result.losses.front().cls);

  CHECK(fs::exists(out + "/checkpoint_best/state.txt"));
  CHECK(fs::exists(out + "/checkpoint_last/model.txt"));
  CHECK(fs::exists(out + "/history.txt"));
  CHECK(fs::exists(out + "/losses.txt"));

  // history round-trips through its text form
  auto history = read_history(out + "/history.txt");
  REQUIRE(history.size() == result.history.size());
  for (size_t i = 0; i < history.size(); ++i) {
    CHECK(history[i].epoch == result.history[i].epoch);
    CHECK(history[i].split == result.history[i].split);
    CHECK(history[i].auc == result.history[i].auc);
    CHECK(history[i].hter == result.history[i].hter);
    CHECK(history[i].threshold == result.history[i].threshold);
  }
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST_SUITE_END();
