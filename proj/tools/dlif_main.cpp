// Command-line entry point: data generation, training, evaluation, gradient
// checking, embedding export and ablation sweeps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "dlif/checks.hpp"
#include "dlif/config.hpp"
#include "dlif/metrics.hpp"
#include "dlif/synthdata.hpp"
#include "dlif/trainer.hpp"

namespace fs = std::filesystem;

namespace {

dlif::KeyValueConfig resolve_config(const std::string& config_path,
                                    const std::vector<std::string>& overrides) {
  dlif::KeyValueConfig cfg = config_path.empty() ? dlif::KeyValueConfig()
                                                 : dlif::KeyValueConfig::from_file(config_path);
  for (const auto& o : overrides) cfg.apply_override(o);
  if (const char* env_seed = std::getenv("DLIF_SEED")) {
    cfg.set("seed", env_seed);
  }
  return cfg;
}

void echo_config(const dlif::KeyValueConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream os(out_dir + "/config_resolved.txt");
  os << cfg.echo();
}

int cmd_gen_data(const std::string& spec_path, const std::vector<std::string>& overrides,
                 const std::string& out_dir) {
  dlif::KeyValueConfig cfg = resolve_config(spec_path, overrides);
  dlif::DatasetSpec spec = dlif::parse_dataset_spec(cfg);
  echo_config(cfg, out_dir);
  dlif::SelfCheck check = dlif::generate_dataset(spec, out_dir);
  std::cout << "wrote " << spec.total_samples() << " samples to " << out_dir << "\n"
            << check.to_string();
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& data_dir, const std::string& out_dir, const std::string& resume) {
  dlif::KeyValueConfig cfg = resolve_config(config_path, overrides);
  dlif::TrainConfig config = dlif::parse_train_config(cfg);
  echo_config(cfg, out_dir);
  dlif::RunResult result = dlif::run_training(config, data_dir, out_dir, resume);
  std::cout << "best epoch " << result.best_epoch << ": AUC " << result.best_auc << ", HTER "
            << result.best_hter << "\n"
            << "checkpoints: " << result.best_checkpoint << " (best), " << result.last_checkpoint
            << " (last)\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest_path,
             const std::string& data_dir, const std::string& calib_path, const std::string& out_file) {
  dlif::ModelMeta meta = dlif::read_model_meta(checkpoint);
  dlif::Models models = dlif::models_from_meta(meta);
  dlif::load_model_weights(checkpoint, models);

  dlif::TrainConfig score_cfg;
  score_cfg.encoder = meta.encoder;
  score_cfg.weights.am_scale = meta.am_scale;

  const std::string dir = data_dir.empty() ? fs::path(manifest_path).parent_path().string() : data_dir;
  auto manifest = dlif::load_manifest(manifest_path);
  dlif::Batch batch = dlif::load_all(manifest, dir, meta.encoder.input_size);
  dlif::ScoreSet eval_set{dlif::liveness_scores(models, batch.images, score_cfg), batch.liveness};

  std::string calib_note = "self";
  dlif::ScoreSet calib_set = eval_set;
  if (!calib_path.empty()) {
    auto calib_manifest = dlif::load_manifest(calib_path);
    const std::string cdir = data_dir.empty() ? fs::path(calib_path).parent_path().string() : data_dir;
    dlif::Batch cbatch = dlif::load_all(calib_manifest, cdir, meta.encoder.input_size);
    calib_set = dlif::ScoreSet{dlif::liveness_scores(models, cbatch.images, score_cfg), cbatch.liveness};
    calib_note = calib_path;
  }

  dlif::EerResult eer = dlif::eer_threshold(calib_set);
  const double h = dlif::hter(eval_set, eer.threshold);
  const double auc = dlif::roc_auc(eval_set);

  std::ofstream os(out_file);
  if (!os) {
    std::cerr << "eval: cannot open " << out_file << "\n";
    return 2;
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf), "split, HTER, AUC, threshold\neval, %.17g, %.17g, %.17g\n", h, auc,
                eer.threshold);
  os << buf << "# threshold calibrated on: " << calib_note << "\n";
  std::cout << "HTER " << h << "  AUC " << auc << "  threshold " << eer.threshold << "\n";
  return 0;
}

int cmd_export(const std::string& checkpoint, const std::string& manifest_path,
               const std::string& data_dir, const std::string& encoder, const std::string& out_file) {
  dlif::ModelMeta meta = dlif::read_model_meta(checkpoint);
  dlif::Models models = dlif::models_from_meta(meta);
  dlif::load_model_weights(checkpoint, models);
  if (encoder == "v" && !models.has_v) {
    std::cerr << "export-embeddings: checkpoint has no identity encoder\n";
    return 2;
  }

  const std::string dir = data_dir.empty() ? fs::path(manifest_path).parent_path().string() : data_dir;
  auto manifest = dlif::load_manifest(manifest_path);
  dlif::Batch batch = dlif::load_all(manifest, dir, meta.encoder.input_size);
  const dlif::EncoderParams& enc = encoder == "v" ? models.enc_v : models.enc_u;
  dlif::EncodeResult res = dlif::encode(enc, batch.images, nullptr, nullptr);
  dlif::export_embeddings(res.features[0], batch.identity, batch.liveness, batch.domain,
                          meta.encoder.feature_dim, out_file);
  std::cout << "wrote " << batch.identity.size() << " embeddings to " << out_file << "\n";
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  dlif::GradientSuiteResult suite = dlif::run_gradient_suite(seed);
  std::cout << suite.to_string();
  return suite.passed ? 0 : 2;
}

struct AblateCell {
  std::string name;
  std::vector<std::string> overrides;
};

int cmd_ablate(const std::string& axis, const std::string& config_path,
               const std::vector<std::string>& overrides, const std::string& data_dir,
               const std::string& out_dir, int jobs, const std::string& self) {
  std::vector<AblateCell> cells;
  if (axis == "sc_flow") {
    for (const std::string& flow : dlif::all_flow_names()) {
      dlif::StylePlan plan = dlif::parse_flow_name(flow);
      std::string levels;
      for (dlif::Level l : plan.active_levels) {
        if (!levels.empty()) levels += ",";
        levels += dlif::level_name(l);
      }
      const std::string mode = plan.cascaded ? "cascaded" : "parallel";
      cells.push_back({flow,
                       {"sc_levels=" + levels, "sc_mode=" + mode, "sc_levels_v=" + levels,
                        "sc_mode_v=" + mode}});
    }
  } else if (axis == "contrast") {
    for (const std::string& c : {"aaic", "binary", "triplet"}) {
      cells.push_back({c, {"contrast=" + c}});
    }
  } else {
    std::cerr << "ablate: unknown axis '" << axis << "' (use sc_flow or contrast)\n";
    return 1;
  }

  fs::create_directories(out_dir);
  std::vector<std::string> commands;
  for (const auto& cell : cells) {
    std::ostringstream cmd;
    cmd << "'" << self << "' train --config '" << config_path << "' --data '" << data_dir
        << "' --out '" << out_dir << "/" << cell.name << "'";
    for (const auto& o : overrides) cmd << " --set '" << o << "'";
    for (const auto& o : cell.overrides) cmd << " --set '" << o << "'";
    commands.push_back(cmd.str());
  }

  std::mutex m;
  size_t next = 0;
  int failures = 0;
  auto worker = [&]() {
    for (;;) {
      std::string cmd;
      {
        std::lock_guard<std::mutex> lock(m);
        if (next >= commands.size()) return;
        cmd = commands[next++];
        std::cout << "[ablate] " << cmd << "\n" << std::flush;
      }
      const int rc = std::system(cmd.c_str());
      if (rc != 0) {
        std::lock_guard<std::mutex> lock(m);
        failures++;
        std::cerr << "[ablate] cell failed: " << cmd << "\n";
      }
    }
  };
  jobs = std::max(1, jobs);
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  if (failures) return 2;
  std::cout << "ablate: " << cells.size() << " cells complete under " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic liveness/identity disentanglement toolkit"};
  app.require_subcommand(1);

  std::string config_path, spec_path, data_dir, out_path, checkpoint, manifest_path, resume;
  std::string calib_path, encoder = "u", axis;
  std::vector<std::string> overrides;
  uint64_t seed = 1;
  int jobs = 1;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "dataset spec file")->required();
  gen->add_option("--out", out_path, "output directory")->required();
  gen->add_option("--set", overrides, "override spec keys (key=value)");

  auto* train = app.add_subcommand("train", "train the two-branch model");
  train->add_option("--config", config_path, "training config file");
  train->add_option("--data", data_dir, "dataset directory (with manifest.txt)")->required();
  train->add_option("--out", out_path, "output directory")->required();
  train->add_option("--resume", resume, "checkpoint directory to resume from");
  train->add_option("--set", overrides, "override config keys (key=value)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval->add_option("--manifest", manifest_path, "manifest file")->required();
  eval->add_option("--data", data_dir, "image root (defaults to the manifest's directory)");
  eval->add_option("--calib", calib_path, "manifest for threshold calibration");
  eval->add_option("--out", out_path, "output metrics file")->required();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of primitives and losses");
  grad->add_option("--seed", seed, "rng seed");

  auto* exp = app.add_subcommand("export-embeddings", "dump encoder features as CSV");
  exp->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  exp->add_option("--manifest", manifest_path, "manifest file")->required();
  exp->add_option("--data", data_dir, "image root (defaults to the manifest's directory)");
  exp->add_option("--encoder", encoder, "u (liveness) or v (identity)")
      ->check(CLI::IsMember({"u", "v"}));
  exp->add_option("--out", out_path, "output CSV file")->required();

  auto* abl = app.add_subcommand("ablate", "run an ablation grid");
  abl->add_option("--axis", axis, "sc_flow or contrast")->required();
  abl->add_option("--config", config_path, "training config file");
  abl->add_option("--data", data_dir, "dataset directory")->required();
  abl->add_option("--out", out_path, "output directory")->required();
  abl->add_option("--set", overrides, "override config keys (key=value)");
  abl->add_option("--jobs", jobs, "parallel cells (independent processes)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(spec_path, overrides, out_path);
    if (train->parsed()) return cmd_train(config_path, overrides, data_dir, out_path, resume);
    if (eval->parsed()) return cmd_eval(checkpoint, manifest_path, data_dir, calib_path, out_path);
    if (grad->parsed()) return cmd_gradcheck(seed);
    if (exp->parsed()) return cmd_export(checkpoint, manifest_path, data_dir, encoder, out_path);
    if (abl->parsed()) {
      return cmd_ablate(axis, config_path, overrides, data_dir, out_path, jobs,
                        fs::read_symlink("/proc/self/exe").string());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
