#include <doctest.h>

#include <cmath>
#include <map>

#include "dlif/stylecross.hpp"
#include "helpers.hpp"

using namespace dlif;
using dlif_test::random_tensor;

TEST_SUITE_BEGIN("stylecross");

namespace {

struct ChannelStats {
  double mean = 0.0, stddev = 0.0;
};

ChannelStats raw_stats(const Tensor& chw, int c) {
  const int hw = chw->dim(1) * chw->dim(2);
  ChannelStats s;
  for (int i = 0; i < hw; ++i) s.mean += chw->data[c * hw + i];
  s.mean /= hw;
  for (int i = 0; i < hw; ++i) {
    const double d = chw->data[c * hw + i] - s.mean;
    s.stddev += d * d;
  }
  s.stddev = std::sqrt(s.stddev / hw);
  return s;
}

}  // namespace

TEST_CASE("identity case: crossing a map with itself returns it") {
  std::mt19937_64 rng(21);
  Tensor a = random_tensor({4, 5, 5}, rng, -2.0, 2.0);
  Tensor out = style_cross(a, a);
  CHECK(dlif_test::max_abs_diff(out->data, a->data) < 1e-9);
}

TEST_CASE("statistic transfer onto a normalized content map") {
  std::mt19937_64 rng(22);
  const int c = 3, h = 6, w = 6, hw = h * w;
  Tensor content = random_tensor({c, h, w}, rng, -1.0, 1.0);
  // exact zero mean, unit raw std per channel
  for (int ch = 0; ch < c; ++ch) {
    ChannelStats s = raw_stats(content, ch);
    for (int i = 0; i < hw; ++i) {
      content->data[ch * hw + i] = (content->data[ch * hw + i] - s.mean) / s.stddev;
    }
  }
  Tensor style = random_tensor({c, h, w}, rng, -1.0, 1.0);
  for (int ch = 0; ch < c; ++ch) {
    ChannelStats s = raw_stats(style, ch);
    for (int i = 0; i < hw; ++i) {
      style->data[ch * hw + i] = 5.0 + 2.0 * (style->data[ch * hw + i] - s.mean) / s.stddev;
    }
  }
  Tensor out = style_cross(content, style);
  for (int ch = 0; ch < c; ++ch) {
    ChannelStats s = raw_stats(out, ch);
    CHECK(std::fabs(s.mean - 5.0) < 1e-4);
    CHECK(std::fabs(s.stddev - 2.0) < 1e-4);
  }
}

TEST_CASE("matches a two-pass oracle within 1e-12") {
  std::mt19937_64 rng(23);
  Tensor content = random_tensor({4, 3, 3}, rng, -1.5, 1.5);
  Tensor style = random_tensor({4, 3, 3}, rng, -1.5, 1.5);
  Tensor out = style_cross(content, style);
  const int hw = 9;
  for (int ch = 0; ch < 4; ++ch) {
    // pass 1: stats with the engine's eps-inside-sqrt convention
    double mc = 0.0, ms = 0.0;
    for (int i = 0; i < hw; ++i) {
      mc += content->data[ch * hw + i];
      ms += style->data[ch * hw + i];
    }
    mc /= hw;
    ms /= hw;
    double vc = 0.0, vs = 0.0;
    for (int i = 0; i < hw; ++i) {
      vc += (content->data[ch * hw + i] - mc) * (content->data[ch * hw + i] - mc);
      vs += (style->data[ch * hw + i] - ms) * (style->data[ch * hw + i] - ms);
    }
    const double sc = std::sqrt(vc / hw + 1e-6);
    const double ss = std::sqrt(vs / hw + 1e-6);
    // pass 2: affine map
    for (int i = 0; i < hw; ++i) {
      const double expect = ss * (content->data[ch * hw + i] - mc) / sc + ms;
      CHECK(out->data[ch * hw + i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("statistic transfer and content preservation on random pairs") {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor content = random_tensor({5, 4, 4}, rng, -1.0, 1.0);
    Tensor style = random_tensor({5, 4, 4}, rng, -1.0, 1.0);
    Tensor out = style_cross(content, style);
    const int hw = 16;
    for (int ch = 0; ch < 5; ++ch) {
      ChannelStats c_in = raw_stats(content, ch);
      if (c_in.stddev <= 1e-3) continue;
      ChannelStats want = raw_stats(style, ch);
      ChannelStats got = raw_stats(out, ch);
      CHECK(std::fabs(got.mean - want.mean) < 1e-4);
      CHECK(std::fabs(got.stddev - want.stddev) < 1e-4);
      // Pearson correlation of the affine map
      double num = 0.0, da = 0.0, db = 0.0;
      for (int i = 0; i < hw; ++i) {
        const double a = content->data[ch * hw + i] - c_in.mean;
        const double b = out->data[ch * hw + i] - got.mean;
        num += a * b;
        da += a * a;
        db += b * b;
      }
      CHECK(num / std::sqrt(da * db) >= 0.999);
    }
  }
}

TEST_CASE("zero-variance content channel maps to the style mean") {
  std::mt19937_64 rng(25);
  Tensor content = full({1, 4, 4}, 0.7);
  Tensor style = random_tensor({1, 4, 4}, rng, -1.0, 1.0);
  Tensor out = style_cross(content, style);
  ChannelStats want = raw_stats(style, 0);
  for (double v : out->data) CHECK(v == doctest::Approx(want.mean).epsilon(1e-9));
}

TEST_CASE("pairing keeps label groups closed") {
  std::mt19937_64 rng(26);
  std::vector<int> labels{1, 1, 0, 0};
  for (int trial = 0; trial < 100; ++trial) {
    auto perm = make_pairing(labels, rng);
    for (size_t i = 0; i < labels.size(); ++i) CHECK(labels[perm[i]] == labels[i]);
  }
}

TEST_CASE("singleton group maps to itself") {
  std::mt19937_64 rng(27);
  auto perm = make_pairing({5, 7, 7}, rng);
  CHECK(perm[0] == 0);
}

TEST_CASE("label safety over 1000 random label vectors") {
  std::mt19937_64 rng(28);
  std::uniform_int_distribution<int> label_dist(0, 3);
  std::uniform_int_distribution<int> size_dist(1, 24);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> labels(size_dist(rng));
    for (int& l : labels) l = label_dist(rng);
    auto perm = make_pairing(labels, rng);
    std::vector<bool> seen(labels.size(), false);
    for (size_t i = 0; i < labels.size(); ++i) {
      CHECK(labels[perm[i]] == labels[i]);
      CHECK_FALSE(seen[perm[i]]);
      seen[perm[i]] = true;
    }
  }
}

TEST_CASE("size-4 group approximates the uniform-over-derangements law") {
  std::mt19937_64 rng(29);
  std::vector<int> labels{0, 0, 0, 0};
  const int draws = 1000;
  std::map<std::vector<int>, int> counts;
  int fixed_point_draws = 0;
  for (int t = 0; t < draws; ++t) {
    auto perm = make_pairing(labels, rng);
    counts[perm]++;
    for (int i = 0; i < 4; ++i) {
      if (perm[i] == i) {
        fixed_point_draws++;
        break;
      }
    }
  }
  // 9 derangements of 4 elements; 16 resampling attempts leave only
  // ~0.625^16 ~ 5e-4 leakage to permutations with fixed points.
  CHECK(fixed_point_draws <= 5);
  const double expect = draws / 9.0;
  const double sigma = std::sqrt(draws * (1.0 / 9.0) * (8.0 / 9.0));
  int derangements_seen = 0;
  for (const auto& [perm, count] : counts) {
    bool is_derangement = true;
    for (int i = 0; i < 4; ++i) is_derangement = is_derangement && perm[i] != i;
    if (!is_derangement) continue;
    derangements_seen++;
    CHECK(std::fabs(count - expect) <= 5.0 * sigma);
  }
  CHECK(derangements_seen == 9);
}

TEST_CASE("flow expansion") {
  StylePlan mh_cascade = parse_style_plan("M,H", "cascaded");
  auto passes = expand_flows(mh_cascade);
  REQUIRE(passes.size() == 1);
  CHECK(passes[0] == std::set<Level>{Level::Mid, Level::High});

  StylePlan mh_parallel = parse_style_plan("M,H", "parallel");
  passes = expand_flows(mh_parallel);
  REQUIRE(passes.size() == 2);
  CHECK(passes[0] == std::set<Level>{Level::Mid});
  CHECK(passes[1] == std::set<Level>{Level::High});

  for (const char* mode : {"cascaded", "parallel"}) {
    StylePlan h_only = parse_style_plan("H", mode);
    passes = expand_flows(h_only);
    REQUIRE(passes.size() == 1);
    CHECK(passes[0] == std::set<Level>{Level::High});
  }

  CHECK_THROWS_AS(expand_flows(StylePlan{}), std::invalid_argument);
}

TEST_CASE("flow names parse and print in the canonical table order") {
  auto names = all_flow_names();
  REQUIRE(names.size() == 11);
  for (const auto& name : names) {
    StylePlan plan = parse_flow_name(name);
    CHECK(plan.name() == name);
  }
  CHECK(parse_flow_name("MxH").cascaded);
  CHECK_FALSE(parse_flow_name("M+H").cascaded);
}

TEST_SUITE_END();
