#include "dlif/stylecross.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dlif {

const char* level_name(Level l) {
  switch (l) {
    case Level::Low: return "L";
    case Level::Mid: return "M";
    case Level::High: return "H";
  }
  return "?";
}

std::string StylePlan::name() const {
  if (active_levels.empty()) return "none";
  std::string out;
  for (Level l : active_levels) {
    if (!out.empty()) out += cascaded ? "x" : "+";
    out += level_name(l);
  }
  return out;
}

namespace {

Level parse_level(char c) {
  switch (c) {
    case 'L': case 'l': return Level::Low;
    case 'M': case 'm': return Level::Mid;
    case 'H': case 'h': return Level::High;
    default: throw std::invalid_argument(std::string("unknown style level '") + c + "'");
  }
}

}  // namespace

StylePlan parse_style_plan(const std::string& levels, const std::string& mode) {
  StylePlan plan;
  if (mode == "cascaded") {
    plan.cascaded = true;
  } else if (mode == "parallel") {
    plan.cascaded = false;
  } else {
    throw std::invalid_argument("sc_mode must be cascaded or parallel, got '" + mode + "'");
  }
  if (levels == "none" || levels.empty()) return plan;
  for (char c : levels) {
    if (c == ',' || c == ' ') continue;
    if (c == '+') { plan.cascaded = false; continue; }
    if (c == 'x' || c == 'X') { plan.cascaded = true; continue; }
    plan.active_levels.insert(parse_level(c));
  }
  return plan;
}

StylePlan parse_flow_name(const std::string& flow) {
  return parse_style_plan(flow, flow.find('+') != std::string::npos ? "parallel" : "cascaded");
}

std::vector<std::string> all_flow_names() {
  return {"L", "M", "H", "LxM", "LxH", "MxH", "LxMxH", "L+M", "L+H", "M+H", "L+M+H"};
}

std::vector<std::set<Level>> expand_flows(const StylePlan& plan) {
  if (plan.active_levels.empty()) {
    throw std::invalid_argument("expand_flows: empty style plan");
  }
  if (plan.cascaded || plan.active_levels.size() == 1) {
    return {plan.active_levels};
  }
  std::vector<std::set<Level>> passes;
  for (Level l : plan.active_levels) passes.push_back({l});
  return passes;
}

std::vector<int> make_pairing(const std::vector<int>& group_labels, std::mt19937_64& rng) {
  const int n = static_cast<int>(group_labels.size());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < n; ++i) groups[group_labels[i]].push_back(i);

  for (auto& [label, members] : groups) {
    (void)label;
    if (members.size() <= 1) continue;  // singleton maps to itself
    std::vector<int> targets = members;
    for (int attempt = 0; attempt < 16; ++attempt) {
      std::shuffle(targets.begin(), targets.end(), rng);
      bool fixed_point = false;
      for (size_t i = 0; i < members.size(); ++i) {
        if (targets[i] == members[i]) { fixed_point = true; break; }
      }
      if (!fixed_point) break;
    }
    for (size_t i = 0; i < members.size(); ++i) perm[members[i]] = targets[i];
  }
  return perm;
}

Tensor apply_style_cross(const Tensor& x, const std::vector<int>& perm, double eps) {
  if (x->rank() != 4) {
    throw std::invalid_argument("apply_style_cross: expects NCHW, got " + shape_str(x->shape));
  }
  const int b = x->dim(0), h = x->dim(2), w = x->dim(3);
  if (static_cast<int>(perm.size()) != b) {
    throw std::invalid_argument("apply_style_cross: permutation size " + std::to_string(perm.size()) +
                                " != batch " + std::to_string(b));
  }
  std::vector<bool> seen(b, false);
  for (int p : perm) {
    if (p < 0 || p >= b || seen[p]) throw std::invalid_argument("apply_style_cross: not a permutation");
    seen[p] = true;
  }

  Tensor mu_c = channel_mean(x);          // [B,C]
  Tensor sd_c = channel_std(x, eps);      // [B,C], >= sqrt(eps)

  // Row permutation as a constant matrix so style stats stay differentiable.
  std::vector<double> pm(static_cast<size_t>(b) * b, 0.0);
  for (int i = 0; i < b; ++i) pm[static_cast<int64_t>(i) * b + perm[i]] = 1.0;
  Tensor perm_mat = make_tensor({b, b}, std::move(pm));
  Tensor mu_s = matmul(perm_mat, mu_c);
  Tensor sd_s = matmul(perm_mat, sd_c);

  Tensor inv_sd_c = exp(scale(log(sd_c), -1.0));  // 1/sd_c, sd_c > 0 by construction
  Tensor centered = add(x, scale(broadcast_channel(mu_c, h, w), -1.0));
  Tensor normalized = mul(centered, broadcast_channel(inv_sd_c, h, w));
  Tensor scaled = mul(normalized, broadcast_channel(sd_s, h, w));
  return add(scaled, broadcast_channel(mu_s, h, w));
}

Tensor style_cross(const Tensor& content, const Tensor& style, double eps) {
  if (content->rank() != 3 || style->rank() != 3 || content->shape != style->shape) {
    throw std::invalid_argument("style_cross: content " + shape_str(content->shape) +
                                " vs style " + shape_str(style->shape));
  }
  const int c = content->dim(0), h = content->dim(1), w = content->dim(2);
  std::vector<double> stacked;
  stacked.reserve(content->data.size() * 2);
  stacked.insert(stacked.end(), content->data.begin(), content->data.end());
  stacked.insert(stacked.end(), style->data.begin(), style->data.end());
  Tensor batch = make_tensor({2, c, h, w}, std::move(stacked));
  Tensor crossed = apply_style_cross(batch, {1, 0}, eps);
  Tensor row = slice(crossed, 0, 0, 1);
  return make_tensor({c, h, w}, row->data);
}

}  // namespace dlif
