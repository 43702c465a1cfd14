#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "dlif/synthdata.hpp"
#include "helpers.hpp"

using namespace dlif;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("synthdata");

namespace {

std::string temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("dlif_synth_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

DatasetSpec small_spec() {
  DatasetSpec spec;
  spec.n_domains = 2;
  spec.ids_per_domain = 4;
  spec.live_per_id = 4;
  spec.spoof_per_id = 4;
  spec.image_size = 16;
  spec.seed = 99;
  return spec;
}

// 2-D DFT magnitude of a single channel.
double dft_mag(const std::vector<double>& img, int size, int c, int fy, int fx) {
  std::complex<double> acc(0.0, 0.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double phase = -2.0 * 3.141592653589793 * (fy * y + fx * x) / size;
      acc += img[(static_cast<size_t>(c) * size + y) * size + x] *
             std::complex<double>(std::cos(phase), std::sin(phase));
    }
  }
  return std::abs(acc);
}

}  // namespace

TEST_CASE("generation is bit-deterministic in all inputs") {
  StyleParams style;
  style.brightness = 0.03;
  style.contrast = 1.05;
  style.hue = 0.2;
  style.blur = 0.5;
  style.noise = 0.02;
  std::mt19937_64 rng1(5), rng2(5);
  SampleRecord a = generate_sample(7, 0, AttackType::moire, style, 32, rng1);
  SampleRecord b = generate_sample(7, 0, AttackType::moire, style, 32, rng2);
  CHECK(dlif_test::bit_equal(a.image->data, b.image->data));
  for (double v : a.image->data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("live samples reject attack overlays and vice versa") {
  std::mt19937_64 rng(6);
  StyleParams style;
  CHECK_THROWS_AS(generate_sample(0, 1, AttackType::grid, style, 16, rng), std::invalid_argument);
  CHECK_THROWS_AS(generate_sample(0, 0, AttackType::none, style, 16, rng), std::invalid_argument);
}

TEST_CASE("grid attack energy concentrates at the lattice frequency") {
  const int size = 32;
  StyleParams style;
  style.contrast = 1.1;
  style.hue = 0.3;
  std::mt19937_64 rng1(9), rng2(9);
  SampleRecord live = generate_sample(3, 1, AttackType::none, style, size, rng1);
  SampleRecord spoof = generate_sample(3, 0, AttackType::grid, style, size, rng2);

  std::vector<double> diff(live.image->data.size());
  for (size_t i = 0; i < diff.size(); ++i) diff[i] = spoof.image->data[i] - live.image->data[i];

  // lattice period 4 -> frequency index size/4
  const int f = size / 4;
  const double peak = dft_mag(diff, size, 0, 0, f) + dft_mag(diff, size, 0, f, 0);
  for (int fy = 0; fy < size / 2; ++fy) {
    for (int fx = 0; fx < size / 2; ++fx) {
      if (fy == 0 && fx == 0) continue;
      if ((fy == 0 && fx == f) || (fy == f && fx == 0)) continue;
      CHECK(dft_mag(diff, size, 0, fy, fx) < peak);
    }
  }
}

TEST_CASE("a pure brightness shift moves the mean by the shift") {
  StyleParams base;
  base.brightness = 0.0;
  base.contrast = 1.0;
  StyleParams shifted = base;
  shifted.brightness = 0.08;
  std::mt19937_64 rng1(12), rng2(12);
  SampleRecord a = generate_sample(11, 1, AttackType::none, base, 24, rng1);
  SampleRecord b = generate_sample(11, 1, AttackType::none, shifted, 24, rng2);
  double mean_diff = 0.0;
  int clipped = 0;
  for (size_t i = 0; i < a.image->data.size(); ++i) {
    mean_diff += b.image->data[i] - a.image->data[i];
    if (a.image->data[i] <= 0.0 || a.image->data[i] >= 1.0 || b.image->data[i] <= 0.0 ||
        b.image->data[i] >= 1.0) {
      clipped++;
    }
  }
  mean_diff /= a.image->data.size();
  INFO("clipped pixels: " << clipped);
  CHECK(std::fabs(mean_diff - 0.08) < 0.005);
}

TEST_CASE("dataset generation writes the exact number of files and lines") {
  const std::string dir = temp_dir("counts");
  DatasetSpec spec = small_spec();
  generate_dataset(spec, dir);
  auto manifest = load_manifest(dir + "/manifest.txt");
  CHECK(static_cast<int>(manifest.size()) == 2 * 4 * 8);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir + "/images")) {
    (void)e;
    files++;
  }
  CHECK(files == 64);
  // invariants: live iff no attack, ids disjoint per domain
  std::map<int, std::set<int>> ids_by_domain;
  for (const auto& e : manifest) {
    CHECK((e.liveness == 1) == (e.attack == AttackType::none));
    ids_by_domain[e.domain_tag].insert(e.identity_id);
  }
  for (int id : ids_by_domain[0]) CHECK_FALSE(ids_by_domain[1].count(id));
  fs::remove_all(dir);
}

TEST_CASE("same seed reproduces manifests and image bytes") {
  const std::string d1 = temp_dir("rep1");
  const std::string d2 = temp_dir("rep2");
  DatasetSpec spec = small_spec();
  generate_dataset(spec, d1);
  generate_dataset(spec, d2);
  std::ifstream m1(d1 + "/manifest.txt"), m2(d2 + "/manifest.txt");
  std::stringstream s1, s2;
  s1 << m1.rdbuf();
  s2 << m2.rdbuf();
  CHECK(s1.str() == s2.str());
  auto manifest = load_manifest(d1 + "/manifest.txt");
  for (size_t i = 0; i < manifest.size(); i += 7) {
    std::ifstream f1(d1 + "/" + manifest[i].path, std::ios::binary);
    std::ifstream f2(d2 + "/" + manifest[i].path, std::ios::binary);
    std::stringstream b1, b2;
    b1 << f1.rdbuf();
    b2 << f2.rdbuf();
    CHECK(b1.str() == b2.str());
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("manifest lines round-trip exactly") {
  ManifestEntry e;
  e.path = "images/img_00042.dlif";
  e.identity_id = 17;
  e.liveness = 0;
  e.attack = AttackType::moire;
  e.domain_tag = 2;
  e.style = {-0.03125, 1.0624999999999998, 0.412, 0.75, 0.019999999999999997};
  ManifestEntry back = parse_manifest_line(manifest_line(e));
  CHECK(back.path == e.path);
  CHECK(back.identity_id == e.identity_id);
  CHECK(back.liveness == e.liveness);
  CHECK(back.attack == e.attack);
  CHECK(back.domain_tag == e.domain_tag);
  CHECK(back.style.brightness == e.style.brightness);
  CHECK(back.style.contrast == e.style.contrast);
  CHECK(back.style.hue == e.style.hue);
  CHECK(back.style.blur == e.style.blur);
  CHECK(back.style.noise == e.style.noise);
  CHECK(manifest_line(back) == manifest_line(e));
}

TEST_CASE("per-domain style draws stay uniform in their ranges (KS test)") {
  const std::string dir = temp_dir("ks");
  DatasetSpec spec = small_spec();
  spec.ids_per_domain = 8;  // 128 draws per domain
  generate_dataset(spec, dir);
  auto manifest = load_manifest(dir + "/manifest.txt");
  for (int d = 0; d < spec.n_domains; ++d) {
    const DomainStyle ranges = spec.style_of(d);
    std::vector<std::pair<StyleRange, std::vector<double>>> cols{
        {ranges.brightness, {}}, {ranges.contrast, {}}, {ranges.hue, {}}, {ranges.blur, {}},
        {ranges.noise, {}}};
    for (const auto& e : manifest) {
      if (e.domain_tag != d) continue;
      cols[0].second.push_back(e.style.brightness);
      cols[1].second.push_back(e.style.contrast);
      cols[2].second.push_back(e.style.hue);
      cols[3].second.push_back(e.style.blur);
      cols[4].second.push_back(e.style.noise);
    }
    for (auto& [range, values] : cols) {
      std::sort(values.begin(), values.end());
      const int n = static_cast<int>(values.size());
      REQUIRE(n >= 50);
      double ks = 0.0;
      for (int i = 0; i < n; ++i) {
        CHECK(values[i] >= range.lo);
        CHECK(values[i] <= range.hi);
        const double cdf = (values[i] - range.lo) / (range.hi - range.lo);
        ks = std::max(ks, std::fabs(cdf - static_cast<double>(i) / n));
        ks = std::max(ks, std::fabs(static_cast<double>(i + 1) / n - cdf));
      }
      // alpha = 0.01 critical value
      CHECK(ks < 1.6276 / std::sqrt(static_cast<double>(n)));
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("identity and liveness counts are exactly independent") {
  const std::string dir = temp_dir("mi");
  SelfCheck check = generate_dataset(small_spec(), dir);
  CHECK(check.identity_liveness_mutual_information == 0.0);
  CHECK(fs::exists(dir + "/selfcheck.txt"));
  fs::remove_all(dir);
}

TEST_CASE("batch sampling honours the per-domain quota") {
  const std::string dir = temp_dir("batch");
  DatasetSpec spec = small_spec();
  spec.n_domains = 3;
  generate_dataset(spec, dir);
  auto manifest = load_manifest(dir + "/manifest.txt");
  std::mt19937_64 rng(1);
  AugmentParams aug;
  Batch batch = sample_batch(manifest, dir, rng, 4, 4, 4, aug, 16);
  CHECK(batch.images->dim(0) == 96);  // 3 domains x 4 ids x 8
  CHECK(batch.images->shape == Shape{96, 3, 16, 16});
  std::map<int, std::pair<int, int>> per_id;  // live, spoof
  for (size_t i = 0; i < batch.identity.size(); ++i) {
    if (batch.liveness[i] == 1) {
      per_id[batch.identity[i]].first++;
    } else {
      per_id[batch.identity[i]].second++;
    }
  }
  CHECK(per_id.size() == 12);
  for (const auto& [id, counts] : per_id) {
    (void)id;
    CHECK(counts.first == 4);
    CHECK(counts.second == 4);
  }
  fs::remove_all(dir);
}

TEST_CASE("id selection frequency is uniform over 1000 draws") {
  const std::string dir = temp_dir("freq");
  DatasetSpec spec = small_spec();
  spec.n_domains = 1;
  spec.ids_per_domain = 8;
  spec.live_per_id = 2;
  spec.spoof_per_id = 2;
  generate_dataset(spec, dir);
  auto manifest = load_manifest(dir + "/manifest.txt");
  std::mt19937_64 rng(2);
  AugmentParams aug;
  aug.enabled = false;
  std::map<int, int> picked;
  const int draws = 1000;
  for (int t = 0; t < draws; ++t) {
    Batch b = sample_batch(manifest, dir, rng, 2, 1, 1, aug, 16);
    std::set<int> ids(b.identity.begin(), b.identity.end());
    for (int id : ids) picked[id]++;
  }
  // each of 8 ids picked with prob 2/8 per draw
  const double expect = draws * 0.25;
  const double sigma = std::sqrt(draws * 0.25 * 0.75);
  for (const auto& [id, count] : picked) {
    (void)id;
    CHECK(std::fabs(count - expect) <= 5.0 * sigma);
  }
  fs::remove_all(dir);
}

TEST_CASE("augmentation keeps shape and stays in range") {
  const std::string dir = temp_dir("aug");
  DatasetSpec spec = small_spec();
  spec.n_domains = 1;
  generate_dataset(spec, dir);
  auto manifest = load_manifest(dir + "/manifest.txt");
  std::mt19937_64 rng(3);
  AugmentParams aug;  // crop + rotation on
  Batch batch = sample_batch(manifest, dir, rng, 2, 2, 2, aug, 16);
  CHECK(batch.images->shape == Shape{8, 3, 16, 16});
  for (double v : batch.images->data) {
    CHECK(v >= -1e-9);
    CHECK(v <= 1.0 + 1e-9);
  }
  fs::remove_all(dir);
}

TEST_SUITE_END();
