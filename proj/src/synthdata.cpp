#include "dlif/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dlif/config.hpp"
#include "dlif/tensor_io.hpp"

namespace dlif {

const char* attack_name(AttackType a) {
  switch (a) {
    case AttackType::none: return "none";
    case AttackType::grid: return "grid";
    case AttackType::moire: return "moire";
    case AttackType::blur: return "blur";
    case AttackType::noise: return "noise";
  }
  return "?";
}

AttackType parse_attack(const std::string& s) {
  if (s == "none") return AttackType::none;
  if (s == "grid") return AttackType::grid;
  if (s == "moire") return AttackType::moire;
  if (s == "blur") return AttackType::blur;
  if (s == "noise") return AttackType::noise;
  throw std::invalid_argument("unknown attack type '" + s + "'");
}

double StyleRange::draw(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

void DatasetSpec::validate() const {
  if (n_domains <= 0 || ids_per_domain <= 0 || live_per_id <= 0 || spoof_per_id <= 0) {
    throw std::invalid_argument("DatasetSpec: counts must be positive");
  }
  if (image_size < 8) throw std::invalid_argument("DatasetSpec: image_size too small");
  if (!styles.empty() && static_cast<int>(styles.size()) != n_domains) {
    throw std::invalid_argument("DatasetSpec: need one style range set per domain");
  }
  if (attack_mix.empty()) throw std::invalid_argument("DatasetSpec: empty attack mix");
  for (AttackType a : attack_mix) {
    if (a == AttackType::none) throw std::invalid_argument("DatasetSpec: 'none' cannot be in the attack mix");
  }
}

DomainStyle DatasetSpec::style_of(int domain) const {
  if (!styles.empty()) return styles[domain];
  return default_domain_styles(n_domains)[domain];
}

std::vector<DomainStyle> default_domain_styles(int n_domains) {
  // Four hand-picked appearance regimes; further domains cycle with a shifted
  // hue so every tag still gets a distinct style.
  std::vector<DomainStyle> base(4);
  base[0] = {{-0.05, 0.10}, {0.90, 1.10}, {0.25, 0.55}, {0.0, 0.4}, {0.00, 0.02}};   // warm, crisp
  base[1] = {{-0.10, 0.05}, {0.80, 1.00}, {-0.55, -0.25}, {0.4, 1.0}, {0.00, 0.02}}; // cool, soft
  base[2] = {{0.00, 0.15}, {1.00, 1.25}, {-0.10, 0.10}, {0.0, 0.3}, {0.02, 0.06}};   // bright, grainy
  base[3] = {{-0.16, -0.04}, {0.72, 0.92}, {0.55, 0.95}, {0.3, 1.0}, {0.05, 0.09}};  // dim, shifted
  std::vector<DomainStyle> out;
  for (int d = 0; d < n_domains; ++d) {
    DomainStyle s = base[d % 4];
    const double shift = 0.3 * (d / 4);
    s.hue.lo += shift;
    s.hue.hi += shift;
    out.push_back(s);
  }
  return out;
}

DatasetSpec parse_dataset_spec(const KeyValueConfig& cfg) {
  static const std::set<std::string> keys = {"n_domains", "ids_per_domain", "live_per_id",
                                             "spoof_per_id", "image_size", "attack_mix", "seed"};
  cfg.restrict_keys(keys, [](const std::string& k) {
    if (k.rfind("style.d", 0) != 0) return false;
    const size_t dot = k.find('.', 7);
    if (dot == std::string::npos) return false;
    const std::string field = k.substr(dot + 1);
    return field == "brightness" || field == "contrast" || field == "hue" || field == "blur" ||
           field == "noise";
  });

  DatasetSpec spec;
  spec.n_domains = cfg.get_int("n_domains", spec.n_domains);
  spec.ids_per_domain = cfg.get_int("ids_per_domain", spec.ids_per_domain);
  spec.live_per_id = cfg.get_int("live_per_id", spec.live_per_id);
  spec.spoof_per_id = cfg.get_int("spoof_per_id", spec.spoof_per_id);
  spec.image_size = cfg.get_int("image_size", spec.image_size);
  spec.seed = cfg.get_u64("seed", spec.seed);
  if (cfg.has("attack_mix")) {
    spec.attack_mix.clear();
    std::istringstream is(cfg.get_str("attack_mix", ""));
    std::string cell;
    while (std::getline(is, cell, ',')) {
      const size_t a = cell.find_first_not_of(" \t");
      const size_t b = cell.find_last_not_of(" \t");
      if (a != std::string::npos) spec.attack_mix.push_back(parse_attack(cell.substr(a, b - a + 1)));
    }
  }
  spec.styles = default_domain_styles(spec.n_domains);
  for (int d = 0; d < spec.n_domains; ++d) {
    const std::string base = "style.d" + std::to_string(d) + ".";
    auto range = [&](const std::string& field, StyleRange fallback) {
      auto v = cfg.get_double_list(base + field, {fallback.lo, fallback.hi});
      if (v.size() != 2 || v[0] > v[1]) {
        throw std::runtime_error("config: " + base + field + " must be 'lo,hi' with lo <= hi");
      }
      return StyleRange{v[0], v[1]};
    };
    spec.styles[d].brightness = range("brightness", spec.styles[d].brightness);
    spec.styles[d].contrast = range("contrast", spec.styles[d].contrast);
    spec.styles[d].hue = range("hue", spec.styles[d].hue);
    spec.styles[d].blur = range("blur", spec.styles[d].blur);
    spec.styles[d].noise = range("noise", spec.styles[d].noise);
  }
  spec.validate();
  return spec;
}

namespace {

using Image = std::vector<double>;  // [3][H][W]

inline double& px(Image& im, int size, int c, int y, int x) {
  return im[(static_cast<size_t>(c) * size + y) * size + x];
}
inline double px(const Image& im, int size, int c, int y, int x) {
  return im[(static_cast<size_t>(c) * size + y) * size + x];
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Identity-seeded base pattern: a smooth random field plus 2-3 landmark blobs
// at identity-specific positions.
Image identity_pattern(int identity_id, int size) {
  std::mt19937_64 id_rng(mix_seed(0x1d5eedULL, static_cast<uint64_t>(identity_id)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Image im(static_cast<size_t>(3) * size * size, 0.5);
  // low-frequency cosine field, slightly decorrelated across channels
  const int waves = 4;
  std::vector<std::array<double, 5>> wave;  // fx, fy, phase, amp, channel skew
  for (int k = 0; k < waves; ++k) {
    wave.push_back({(unit(id_rng) * 2.0 - 1.0) * 2.0, (unit(id_rng) * 2.0 - 1.0) * 2.0,
                    unit(id_rng) * 6.283185307179586, 0.05 + 0.06 * unit(id_rng),
                    unit(id_rng) * 1.2});
  }
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        double v = 0.0;
        for (const auto& wv : wave) {
          v += wv[3] * std::cos(6.283185307179586 * (wv[0] * x + wv[1] * y) / size + wv[2] + wv[4] * c);
        }
        px(im, size, c, y, x) += v;
      }
    }
  }
  // identity landmarks
  const int blobs = 2 + static_cast<int>(id_rng() % 2);
  for (int b = 0; b < blobs; ++b) {
    const double cx = (0.2 + 0.6 * unit(id_rng)) * size;
    const double cy = (0.2 + 0.6 * unit(id_rng)) * size;
    const double r = (0.08 + 0.08 * unit(id_rng)) * size;
    double amp[3];
    for (double& a : amp) a = (unit(id_rng) * 2.0 - 1.0) * 0.25;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
        const double g = std::exp(-0.5 * d2);
        for (int c = 0; c < 3; ++c) px(im, size, c, y, x) += amp[c] * g;
      }
    }
  }
  return im;
}

// One 3x3 mean-filter pass with replicate-style normalization at borders.
Image box_blur_pass(const Image& in, int size) {
  Image out(in.size());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= size || xx < 0 || xx >= size) continue;
            acc += px(in, size, c, yy, xx);
            cnt++;
          }
        }
        px(out, size, c, y, x) = acc / cnt;
      }
    }
  }
  return out;
}

void apply_blur(Image& im, int size, double radius) {
  const int full = static_cast<int>(radius);
  for (int i = 0; i < full; ++i) im = box_blur_pass(im, size);
  const double frac = radius - full;
  if (frac > 0.0) {
    Image blurred = box_blur_pass(im, size);
    for (size_t i = 0; i < im.size(); ++i) im[i] = (1.0 - frac) * im[i] + frac * blurred[i];
  }
}

void overlay_attack(Image& im, int size, AttackType attack, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  switch (attack) {
    case AttackType::none:
      break;
    case AttackType::grid: {
      // additive periodic lattice, period 4 px
      const double amp = 0.10 + 0.06 * unit(rng);
      const double period = 4.0;
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double g =
              0.5 * amp *
              (std::cos(6.283185307179586 * x / period) + std::cos(6.283185307179586 * y / period));
          for (int c = 0; c < 3; ++c) px(im, size, c, y, x) += g;
        }
      }
      break;
    }
    case AttackType::moire: {
      const double amp = 0.12 + 0.06 * unit(rng);
      const double t1 = unit(rng) * 3.141592653589793;
      const double t2 = t1 + 0.2 + 0.4 * unit(rng);
      const double p1 = 3.0 + 2.0 * unit(rng);
      const double p2 = 3.0 + 2.0 * unit(rng);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double u1 = (x * std::cos(t1) + y * std::sin(t1)) / p1;
          const double u2 = (x * std::cos(t2) + y * std::sin(t2)) / p2;
          const double m = amp * std::cos(6.283185307179586 * u1) * std::cos(6.283185307179586 * u2);
          for (int c = 0; c < 3; ++c) px(im, size, c, y, x) += m;
        }
      }
      break;
    }
    case AttackType::blur: {
      // low-pass of the live render, clearly past the style blur range
      apply_blur(im, size, 2.5 + unit(rng));
      break;
    }
    case AttackType::noise: {
      // high-frequency luminance speckle
      const double amp = 0.12 + 0.08 * unit(rng);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double n = amp * (2.0 * unit(rng) - 1.0);
          for (int c = 0; c < 3; ++c) px(im, size, c, y, x) += n;
        }
      }
      break;
    }
  }
}

// Rotation of (r,g,b) around the gray axis.
void apply_hue(Image& im, int size, double angle) {
  if (angle == 0.0) return;
  const double u = 1.0 / std::sqrt(3.0);
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  double m[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = t * u * u + (i == j ? c : 0.0);
  }
  m[0][1] += -s * u; m[0][2] += s * u;
  m[1][0] += s * u;  m[1][2] += -s * u;
  m[2][0] += -s * u; m[2][1] += s * u;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double r = px(im, size, 0, y, x), g = px(im, size, 1, y, x), b = px(im, size, 2, y, x);
      px(im, size, 0, y, x) = m[0][0] * r + m[0][1] * g + m[0][2] * b;
      px(im, size, 1, y, x) = m[1][0] * r + m[1][1] * g + m[1][2] * b;
      px(im, size, 2, y, x) = m[2][0] * r + m[2][1] * g + m[2][2] * b;
    }
  }
}

void apply_style(Image& im, int size, const StyleParams& st, std::mt19937_64& rng) {
  apply_hue(im, size, st.hue);
  for (double& v : im) v = 0.5 + st.contrast * (v - 0.5);
  for (double& v : im) v += st.brightness;
  if (st.blur > 0.0) apply_blur(im, size, st.blur);
  if (st.noise > 0.0) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double n = st.noise * (2.0 * unit(rng) - 1.0);
        for (int c = 0; c < 3; ++c) px(im, size, c, y, x) += n;
      }
    }
  }
}

}  // namespace

SampleRecord generate_sample(int identity_id, int liveness, AttackType attack,
                             const StyleParams& style, int image_size, std::mt19937_64& rng) {
  if ((liveness == 1) != (attack == AttackType::none)) {
    throw std::invalid_argument("generate_sample: liveness/attack mismatch (live iff attack none)");
  }
  Image im = identity_pattern(identity_id, image_size);
  overlay_attack(im, image_size, attack, rng);
  apply_style(im, image_size, style, rng);
  for (double& v : im) v = std::clamp(v, 0.0, 1.0);

  SampleRecord rec;
  rec.image = make_tensor({3, image_size, image_size}, std::move(im));
  rec.identity_id = identity_id;
  rec.liveness = liveness;
  rec.attack = attack;
  rec.style = style;
  return rec;
}

std::string manifest_line(const ManifestEntry& e) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s, %d, %s, %s, %d, %.17g, %.17g, %.17g, %.17g, %.17g",
                e.path.c_str(), e.identity_id, e.liveness == 1 ? "live" : "spoof",
                attack_name(e.attack), e.domain_tag, e.style.brightness, e.style.contrast,
                e.style.hue, e.style.blur, e.style.noise);
  return buf;
}

ManifestEntry parse_manifest_line(const std::string& line) {
  std::istringstream ls(line);
  auto next = [&]() {
    std::string cell;
    if (!std::getline(ls, cell, ',')) throw std::runtime_error("manifest: short line '" + line + "'");
    size_t a = cell.find_first_not_of(" \t");
    size_t b = cell.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : cell.substr(a, b - a + 1);
  };
  ManifestEntry e;
  e.path = next();
  e.identity_id = std::stoi(next());
  const std::string lv = next();
  if (lv == "live") {
    e.liveness = 1;
  } else if (lv == "spoof") {
    e.liveness = 0;
  } else {
    throw std::runtime_error("manifest: bad liveness '" + lv + "'");
  }
  e.attack = parse_attack(next());
  e.domain_tag = std::stoi(next());
  e.style.brightness = std::stod(next());
  e.style.contrast = std::stod(next());
  e.style.hue = std::stod(next());
  e.style.blur = std::stod(next());
  e.style.noise = std::stod(next());
  return e;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_manifest: cannot open " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(parse_manifest_line(line));
  }
  return out;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_manifest: cannot open " + path);
  for (const auto& e : entries) os << manifest_line(e) << "\n";
  if (!os) throw std::runtime_error("save_manifest: write failed for " + path);
}

std::string SelfCheck::to_string() const {
  std::ostringstream os;
  os << "identity_liveness_mutual_information = " << identity_liveness_mutual_information << "\n";
  os << "pixel_mean_probe_accuracy (rows: trained-on domain, cols: evaluated-on domain):\n";
  for (size_t a = 0; a < cross_domain_accuracy.size(); ++a) {
    os << "  d" << a << ":";
    for (double v : cross_domain_accuracy[a]) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), " %.3f", v);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

namespace {

// Best-threshold accuracy of a scalar feature, trained by exhaustive scan.
struct MeanProbe {
  double threshold = 0.0;
  bool live_above = true;

  void fit(const std::vector<double>& x, const std::vector<int>& y) {
    std::vector<double> sorted = x;
    std::sort(sorted.begin(), sorted.end());
    double best_acc = -1.0;
    for (size_t i = 0; i + 1 <= sorted.size(); ++i) {
      const double t = i + 1 < sorted.size() ? 0.5 * (sorted[i] + sorted[i + 1]) : sorted[i] + 1.0;
      for (bool dir : {true, false}) {
        int ok = 0;
        for (size_t k = 0; k < x.size(); ++k) {
          const bool pred_live = dir ? x[k] >= t : x[k] < t;
          if (pred_live == (y[k] == 1)) ok++;
        }
        const double acc = static_cast<double>(ok) / x.size();
        if (acc > best_acc) {
          best_acc = acc;
          threshold = t;
          live_above = dir;
        }
      }
    }
  }
  double accuracy(const std::vector<double>& x, const std::vector<int>& y) const {
    int ok = 0;
    for (size_t k = 0; k < x.size(); ++k) {
      const bool pred_live = live_above ? x[k] >= threshold : x[k] < threshold;
      if (pred_live == (y[k] == 1)) ok++;
    }
    return static_cast<double>(ok) / x.size();
  }
};

}  // namespace

SelfCheck generate_dataset(const DatasetSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir + "/images");

  std::vector<ManifestEntry> manifest;
  std::vector<double> mean_pixel;
  std::vector<int> liveness_flat, domain_flat;
  // exact joint counts for the independence check
  std::map<std::pair<int, int>, int64_t> joint;

  int sample_index = 0;
  for (int d = 0; d < spec.n_domains; ++d) {
    const DomainStyle ds = spec.style_of(d);
    for (int k = 0; k < spec.ids_per_domain; ++k) {
      const int identity = d * spec.ids_per_domain + k;
      for (int s = 0; s < spec.live_per_id + spec.spoof_per_id; ++s) {
        const int liveness = s < spec.live_per_id ? 1 : 0;
        std::mt19937_64 rng(mix_seed(spec.seed, static_cast<uint64_t>(sample_index)));
        AttackType attack = AttackType::none;
        if (liveness == 0) {
          attack = spec.attack_mix[rng() % spec.attack_mix.size()];
        }
        StyleParams style;
        style.brightness = ds.brightness.draw(rng);
        style.contrast = ds.contrast.draw(rng);
        style.hue = ds.hue.draw(rng);
        style.blur = ds.blur.draw(rng);
        style.noise = ds.noise.draw(rng);

        SampleRecord rec = generate_sample(identity, liveness, attack, style, spec.image_size, rng);

        char name[64];
        std::snprintf(name, sizeof(name), "images/img_%05d.dlif", sample_index);
        write_dlif1(out_dir + "/" + name, rec.image);

        ManifestEntry e;
        e.path = name;
        e.identity_id = identity;
        e.liveness = liveness;
        e.attack = attack;
        e.domain_tag = d;
        e.style = style;
        manifest.push_back(e);

        double mp = 0.0;
        for (double v : rec.image->data) mp += v;
        mean_pixel.push_back(mp / rec.image->data.size());
        liveness_flat.push_back(liveness);
        domain_flat.push_back(d);
        joint[{identity, liveness}]++;
        sample_index++;
      }
    }
  }
  save_manifest(out_dir + "/manifest.txt", manifest);

  // Independence of (identity, liveness) by exact counts.
  SelfCheck check;
  {
    std::map<int, int64_t> by_id, by_live;
    int64_t total = 0;
    for (const auto& [key, c] : joint) {
      by_id[key.first] += c;
      by_live[key.second] += c;
      total += c;
    }
    double mi = 0.0;
    for (const auto& [key, c] : joint) {
      const double ratio = static_cast<double>(c) * static_cast<double>(total) /
                           (static_cast<double>(by_id[key.first]) * static_cast<double>(by_live[key.second]));
      mi += (static_cast<double>(c) / total) * std::log(ratio);
    }
    check.identity_liveness_mutual_information = mi;
  }

  // Cross-domain degradation of a trivial pixel-mean liveness probe.
  check.cross_domain_accuracy.assign(spec.n_domains, std::vector<double>(spec.n_domains, 0.0));
  for (int a = 0; a < spec.n_domains; ++a) {
    std::vector<double> xa;
    std::vector<int> ya;
    for (size_t i = 0; i < mean_pixel.size(); ++i) {
      if (domain_flat[i] == a) {
        xa.push_back(mean_pixel[i]);
        ya.push_back(liveness_flat[i]);
      }
    }
    MeanProbe probe;
    probe.fit(xa, ya);
    for (int b = 0; b < spec.n_domains; ++b) {
      std::vector<double> xb;
      std::vector<int> yb;
      for (size_t i = 0; i < mean_pixel.size(); ++i) {
        if (domain_flat[i] == b) {
          xb.push_back(mean_pixel[i]);
          yb.push_back(liveness_flat[i]);
        }
      }
      check.cross_domain_accuracy[a][b] = probe.accuracy(xb, yb);
    }
  }

  std::ofstream rep(out_dir + "/selfcheck.txt");
  rep << check.to_string();
  return check;
}

namespace {

// Bilinear sample with border clamp.
double sample_bilinear(const Image& im, int size, int c, double y, double x) {
  const double yc = std::clamp(y, 0.0, static_cast<double>(size - 1));
  const double xc = std::clamp(x, 0.0, static_cast<double>(size - 1));
  const int y0 = static_cast<int>(yc), x0 = static_cast<int>(xc);
  const int y1 = std::min(y0 + 1, size - 1), x1 = std::min(x0 + 1, size - 1);
  const double fy = yc - y0, fx = xc - x0;
  return (1 - fy) * ((1 - fx) * px(im, size, c, y0, x0) + fx * px(im, size, c, y0, x1)) +
         fy * ((1 - fx) * px(im, size, c, y1, x0) + fx * px(im, size, c, y1, x1));
}

// Random resized crop + rotation, then resample to out_size.
Image augment_image(const Image& in, int size, int out_size, const AugmentParams& ap,
                    std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double crop = size, ox = 0.0, oy = 0.0, angle = 0.0;
  if (ap.enabled) {
    const double s = ap.min_scale + (ap.max_scale - ap.min_scale) * unit(rng);
    crop = std::max(4.0, size * std::sqrt(s));
    ox = unit(rng) * (size - crop);
    oy = unit(rng) * (size - crop);
    angle = (2.0 * unit(rng) - 1.0) * ap.max_rotation_deg * 3.141592653589793 / 180.0;
  }
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double cx = ox + crop / 2.0, cy = oy + crop / 2.0;
  Image out(static_cast<size_t>(3) * out_size * out_size);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < out_size; ++y) {
      for (int x = 0; x < out_size; ++x) {
        const double u = (x + 0.5) / out_size * crop + ox - cx;
        const double v = (y + 0.5) / out_size * crop + oy - cy;
        const double xs = ca * u - sa * v + cx - 0.5;
        const double ys = sa * u + ca * v + cy - 0.5;
        out[(static_cast<size_t>(c) * out_size + y) * out_size + x] =
            sample_bilinear(in, size, c, ys, xs);
      }
    }
  }
  return out;
}

Image resize_image(const Image& in, int size, int out_size) {
  if (size == out_size) return in;
  AugmentParams off;
  off.enabled = false;
  std::mt19937_64 dummy(0);
  return augment_image(in, size, out_size, off, dummy);
}

}  // namespace

Batch sample_batch(const std::vector<ManifestEntry>& manifest, const std::string& data_dir,
                   std::mt19937_64& rng, int ids_per_domain, int live_per_id, int spoof_per_id,
                   const AugmentParams& augment, int out_size) {
  // domain -> identity -> indices split by liveness
  std::map<int, std::map<int, std::array<std::vector<int>, 2>>> by_domain;
  for (size_t i = 0; i < manifest.size(); ++i) {
    by_domain[manifest[i].domain_tag][manifest[i].identity_id][manifest[i].liveness]
        .push_back(static_cast<int>(i));
  }

  Batch batch;
  std::vector<Image> images;
  int image_size = -1;
  for (auto& [domain, ids] : by_domain) {
    std::vector<int> id_list;
    for (auto& [id, v] : ids) {
      (void)v;
      id_list.push_back(id);
    }
    std::shuffle(id_list.begin(), id_list.end(), rng);
    const int take = std::min<int>(ids_per_domain, static_cast<int>(id_list.size()));
    for (int t = 0; t < take; ++t) {
      const int id = id_list[t];
      for (int liveness : {1, 0}) {
        auto pool = ids[id][liveness];
        const int want = liveness == 1 ? live_per_id : spoof_per_id;
        std::shuffle(pool.begin(), pool.end(), rng);
        std::vector<int> chosen;
        if (static_cast<int>(pool.size()) >= want) {
          chosen.assign(pool.begin(), pool.begin() + want);
        } else {
          std::cerr << "sample_batch: id " << id << " has only " << pool.size() << " "
                    << (liveness ? "live" : "spoof") << " samples, sampling with replacement\n";
          for (int k = 0; k < want; ++k) {
            chosen.push_back(pool.empty() ? -1 : pool[rng() % pool.size()]);
          }
        }
        for (int idx : chosen) {
          if (idx < 0) throw std::runtime_error("sample_batch: id " + std::to_string(id) +
                                                " has no samples of required liveness");
          const ManifestEntry& e = manifest[idx];
          Tensor img = read_dlif1(data_dir + "/" + e.path);
          image_size = img->dim(1);
          images.push_back(augment_image(img->data, image_size, out_size, augment, rng));
          batch.identity.push_back(e.identity_id);
          batch.liveness.push_back(e.liveness);
          batch.domain.push_back(e.domain_tag);
        }
      }
    }
  }
  if (images.empty()) throw std::runtime_error("sample_batch: empty manifest");

  const int b = static_cast<int>(images.size());
  std::vector<double> data;
  data.reserve(static_cast<size_t>(b) * 3 * out_size * out_size);
  for (const auto& im : images) data.insert(data.end(), im.begin(), im.end());
  batch.images = make_tensor({b, 3, out_size, out_size}, std::move(data));
  return batch;
}

Batch load_all(const std::vector<ManifestEntry>& manifest, const std::string& data_dir, int out_size) {
  if (manifest.empty()) throw std::runtime_error("load_all: empty manifest");
  Batch batch;
  std::vector<double> data;
  data.reserve(manifest.size() * 3 * out_size * out_size);
  for (const auto& e : manifest) {
    Tensor img = read_dlif1(data_dir + "/" + e.path);
    Image resized = resize_image(img->data, img->dim(1), out_size);
    data.insert(data.end(), resized.begin(), resized.end());
    batch.identity.push_back(e.identity_id);
    batch.liveness.push_back(e.liveness);
    batch.domain.push_back(e.domain_tag);
  }
  batch.images = make_tensor({static_cast<int>(manifest.size()), 3, out_size, out_size}, std::move(data));
  return batch;
}

}  // namespace dlif
