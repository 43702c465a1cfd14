#pragma once

#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dlif/tensor.hpp"

namespace dlif {

enum class Level { Low, Mid, High };

const char* level_name(Level l);

// Which encoder levels apply the statistic swap and whether multi-level plans
// run in one cascaded pass or one parallel pass per level.
struct StylePlan {
  std::set<Level> active_levels;
  bool cascaded = true;  // ignored when |active_levels| <= 1

  bool enabled() const { return !active_levels.empty(); }
  // Canonical flow name: "MxH", "M+H", "L", ... (empty plan -> "none").
  std::string name() const;
};

// Parses "M,H" / "M+H" / "MxH" / "none"; '+' and 'x' separators set the mode,
// ',' keeps the given mode argument.
StylePlan parse_style_plan(const std::string& levels, const std::string& mode);
StylePlan parse_flow_name(const std::string& flow);

// The eleven flow names in the canonical ablation order.
std::vector<std::string> all_flow_names();

// Cascaded -> a single pass with every active level; parallel -> one pass per
// active level.
std::vector<std::set<Level>> expand_flows(const StylePlan& plan);

// Per-group uniform permutation, resampled up to 16 times to avoid fixed
// points; singleton groups map to themselves.
std::vector<int> make_pairing(const std::vector<int>& group_labels, std::mt19937_64& rng);

// Per-channel statistic swap on a batch feature map, wired through the
// differentiable primitives. Sample i takes the style (channel mean/std) of
// sample perm[i]. Stds are sqrt(biased variance + eps); the eps inside the
// square root keeps zero-variance channels finite and the identity pairing
// exact.
Tensor apply_style_cross(const Tensor& x_nchw, const std::vector<int>& perm, double eps = 1e-6);

// Single-pair CHW convenience wrapper over apply_style_cross.
Tensor style_cross(const Tensor& content_chw, const Tensor& style_chw, double eps = 1e-6);

}  // namespace dlif
