#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "dlif/tensor.hpp"

namespace dlif {

enum class AttackType { none, grid, moire, blur, noise };

const char* attack_name(AttackType a);
AttackType parse_attack(const std::string& s);

// Global appearance factors applied after composing the base pattern and any
// attack artifact.
struct StyleParams {
  double brightness = 0.0;  // additive shift
  double contrast = 1.0;    // gain around 0.5
  double hue = 0.0;         // rotation (radians) around the gray axis
  double blur = 0.0;        // box-blur passes, fractional part blends
  double noise = 0.0;       // additive speckle amplitude
};

struct SampleRecord {
  Tensor image;  // [3,H,W] in [0,1]
  int identity_id = 0;
  int liveness = 1;  // 1 live, 0 spoof
  AttackType attack = AttackType::none;
  StyleParams style;
  int domain_tag = 0;
  std::string path;  // set when loaded from a manifest
};

struct StyleRange {
  double lo = 0.0, hi = 0.0;
  double draw(std::mt19937_64& rng) const;
};

struct DomainStyle {
  StyleRange brightness{-0.05, 0.05};
  StyleRange contrast{0.95, 1.05};
  StyleRange hue{-0.2, 0.2};
  StyleRange blur{0.0, 0.5};
  StyleRange noise{0.0, 0.02};
};

struct DatasetSpec {
  int n_domains = 4;
  int ids_per_domain = 12;
  int live_per_id = 8;
  int spoof_per_id = 8;
  int image_size = 32;
  std::vector<DomainStyle> styles;          // one per domain (defaulted if empty)
  std::vector<AttackType> attack_mix{AttackType::grid, AttackType::moire, AttackType::blur,
                                     AttackType::noise};
  uint64_t seed = 7;

  void validate() const;
  DomainStyle style_of(int domain) const;
  int total_samples() const { return n_domains * ids_per_domain * (live_per_id + spoof_per_id); }
};

// Distinct per-domain style ranges so cross-domain shift is real.
std::vector<DomainStyle> default_domain_styles(int n_domains);

class KeyValueConfig;

// Flat-config parsing; style ranges use keys like style.d0.brightness = lo,hi.
DatasetSpec parse_dataset_spec(const KeyValueConfig& cfg);

// Deterministic given all inputs; the identity seeds the base pattern, the
// rng drives only the stochastic artifact/noise realizations.
SampleRecord generate_sample(int identity_id, int liveness, AttackType attack,
                             const StyleParams& style, int image_size, std::mt19937_64& rng);

struct ManifestEntry {
  std::string path;
  int identity_id = 0;
  int liveness = 1;
  AttackType attack = AttackType::none;
  int domain_tag = 0;
  StyleParams style;
};

std::string manifest_line(const ManifestEntry& e);
ManifestEntry parse_manifest_line(const std::string& line);
std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

struct SelfCheck {
  double identity_liveness_mutual_information = 0.0;  // exact count check, 0 by construction
  std::vector<std::vector<double>> cross_domain_accuracy;  // pixel-mean probe, [train][eval]
  std::string to_string() const;
};

// Writes one DLIF1 image per sample plus manifest.txt and selfcheck.txt.
SelfCheck generate_dataset(const DatasetSpec& spec, const std::string& out_dir);

struct AugmentParams {
  double min_scale = 0.8;  // random resized crop
  double max_scale = 1.0;
  double max_rotation_deg = 10.0;
  bool enabled = true;
};

struct Batch {
  Tensor images;                 // [B,3,H,W]
  std::vector<int> identity;     // global identity ids
  std::vector<int> liveness;     // 1 live, 0 spoof
  std::vector<int> domain;
};

// Algorithm-style sampler: per domain pick ids_per_domain identities, then
// live_per_id live and spoof_per_id spoof images of each. Falls back to
// sampling with replacement (logged to stderr) when an id runs short.
Batch sample_batch(const std::vector<ManifestEntry>& manifest, const std::string& data_dir,
                   std::mt19937_64& rng, int ids_per_domain, int live_per_id, int spoof_per_id,
                   const AugmentParams& augment, int out_size);

// Loads every manifest image unaugmented, resized to out_size if needed.
Batch load_all(const std::vector<ManifestEntry>& manifest, const std::string& data_dir, int out_size);

}  // namespace dlif
