#include "dlif/networks.hpp"

#include <cmath>
#include <stdexcept>

namespace dlif {

void EncoderConfig::validate() const {
  if (input_size <= 0 || input_size % 8 != 0) {
    throw std::invalid_argument("EncoderConfig: input_size must be a positive multiple of 8");
  }
  if (feature_dim != stage_channels[2]) {
    throw std::invalid_argument("EncoderConfig: feature_dim must equal stage_channels[2]");
  }
  for (int c : stage_channels) {
    if (c <= 0) throw std::invalid_argument("EncoderConfig: non-positive stage channel count");
  }
  if (cwsa_enabled && (cwsa_reduction <= 0 || stage_channels[2] % cwsa_reduction != 0)) {
    throw std::invalid_argument("EncoderConfig: cwsa_reduction must divide the high channel count");
  }
}

std::vector<Tensor> EncoderParams::all() const {
  std::vector<Tensor> out;
  for (const auto& s : stages) {
    out.push_back(s.wa);
    out.push_back(s.ba);
    out.push_back(s.wb);
    out.push_back(s.bb);
  }
  if (config.cwsa_enabled) {
    out.push_back(cwsa.w1);
    out.push_back(cwsa.b1);
    out.push_back(cwsa.w2);
    out.push_back(cwsa.b2);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> EncoderParams::named(const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (int i = 0; i < 3; ++i) {
    const std::string base = prefix + ".s" + std::to_string(i + 1);
    out.emplace_back(base + ".wa", stages[i].wa);
    out.emplace_back(base + ".ba", stages[i].ba);
    out.emplace_back(base + ".wb", stages[i].wb);
    out.emplace_back(base + ".bb", stages[i].bb);
  }
  if (config.cwsa_enabled) {
    out.emplace_back(prefix + ".cwsa.w1", cwsa.w1);
    out.emplace_back(prefix + ".cwsa.b1", cwsa.b1);
    out.emplace_back(prefix + ".cwsa.w2", cwsa.w2);
    out.emplace_back(prefix + ".cwsa.b2", cwsa.b2);
  }
  return out;
}

namespace {

// Kaiming-uniform with fan-in, relu gain.
Tensor kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> data(static_cast<size_t>(numel(shape)));
  for (double& v : data) v = dist(rng);
  return make_tensor(std::move(shape), std::move(data), true);
}

Tensor stage_forward(const Tensor& x, const ConvStageParams& s) {
  Tensor h = relu(conv2d(x, s.wa, s.ba, 2, 1));
  return relu(conv2d(h, s.wb, s.bb, 1, 1));
}

}  // namespace

EncoderParams init_encoder(const EncoderConfig& config, std::mt19937_64& rng) {
  config.validate();
  EncoderParams p;
  p.config = config;
  int cin = 3;
  for (int i = 0; i < 3; ++i) {
    const int cout = config.stage_channels[i];
    p.stages[i].wa = kaiming_uniform({cout, cin, 3, 3}, cin * 9, rng);
    p.stages[i].ba = zeros({cout}, true);
    p.stages[i].wb = kaiming_uniform({cout, cout, 3, 3}, cout * 9, rng);
    p.stages[i].bb = zeros({cout}, true);
    cin = cout;
  }
  if (config.cwsa_enabled) {
    const int c = config.stage_channels[2];
    const int hidden = c / config.cwsa_reduction;
    p.cwsa.w1 = kaiming_uniform({hidden, 2 * c}, 2 * c, rng);
    p.cwsa.b1 = zeros({hidden}, true);
    p.cwsa.w2 = kaiming_uniform({c, hidden}, hidden, rng);
    p.cwsa.b2 = zeros({c}, true);
  }
  return p;
}

HeadParams init_head(const HeadConfig& config, std::mt19937_64& rng) {
  HeadParams p;
  p.config = config;
  p.weight = kaiming_uniform({config.num_classes, config.feature_dim}, config.feature_dim, rng);
  return p;
}

Tensor cwsa_forward(const Tensor& x, const CwsaParams& params) {
  if (x->rank() != 4) {
    throw std::invalid_argument("cwsa_forward: expects NCHW, got " + shape_str(x->shape));
  }
  const int c = x->dim(1), h = x->dim(2), w = x->dim(3);
  if (params.w1->dim(1) != 2 * c) {
    throw std::invalid_argument("cwsa_forward: channel mismatch, feature map has " + std::to_string(c) +
                                " channels but w1 expects " + std::to_string(params.w1->dim(1) / 2));
  }
  Tensor mu = channel_mean(x);  // [B,C]
  // biased variance via E[x^2] - E[x]^2
  Tensor var = add(channel_mean(square(x)), scale(square(mu), -1.0));
  Tensor style = concat({mu, var}, 1);  // [B,2C]
  Tensor hidden = relu(linear(style, params.w1, params.b1));
  Tensor gate = sigmoid(linear(hidden, params.w2, params.b2));  // a in (0,1)^C
  return add(mul(broadcast_channel(gate, h, w), x), x);         // X_hat = a*X + X
}

EncodeResult encode(const EncoderParams& enc, const Tensor& batch, const StylePlan* plan,
                    const LevelPairings* pairing) {
  enc.config.validate();
  if (batch->rank() != 4 || batch->dim(1) != 3) {
    throw std::invalid_argument("encode: expects Nx3xHxW batch, got " + shape_str(batch->shape));
  }
  if (batch->dim(2) != enc.config.input_size || batch->dim(3) != enc.config.input_size) {
    throw std::invalid_argument("encode: batch spatial size " + std::to_string(batch->dim(2)) +
                                " != configured input_size " + std::to_string(enc.config.input_size));
  }

  std::vector<std::set<Level>> passes;
  if (plan != nullptr && plan->enabled()) {
    passes = expand_flows(*plan);
    if (pairing == nullptr) {
      throw std::invalid_argument("encode: style plan given without pairings");
    }
    for (Level l : plan->active_levels) {
      auto it = pairing->perms.find(l);
      if (it == pairing->perms.end()) {
        throw std::invalid_argument(std::string("encode: active level ") + level_name(l) +
                                    " has no pairing permutation");
      }
      const auto& perm = it->second;
      if (perm.size() != pairing->group_labels.size() ||
          static_cast<int>(perm.size()) != batch->dim(0)) {
        throw std::invalid_argument("encode: pairing size mismatch with batch");
      }
      for (size_t i = 0; i < perm.size(); ++i) {
        if (pairing->group_labels[i] != pairing->group_labels[perm[i]]) {
          throw std::invalid_argument(std::string("encode: pairing at level ") + level_name(l) +
                                      " crosses label groups (sample " + std::to_string(i) + ")");
        }
      }
    }
  } else {
    passes.push_back({});  // plain pass
  }

  const std::array<Level, 3> level_of_stage{Level::Low, Level::Mid, Level::High};
  EncodeResult result;
  for (const auto& cross_levels : passes) {
    Tensor h = batch;
    std::array<Tensor, 3> maps;
    for (int si = 0; si < 3; ++si) {
      h = stage_forward(h, enc.stages[si]);
      if (cross_levels.count(level_of_stage[si])) {
        h = apply_style_cross(h, pairing->perms.at(level_of_stage[si]));
      }
      maps[si] = h;
    }
    if (enc.config.cwsa_enabled) h = cwsa_forward(h, enc.cwsa);
    result.features.push_back(global_avg_pool(h));
    result.intermediates.push_back(std::move(maps));
  }
  return result;
}

HeadOutput head_forward(const HeadParams& head, const Tensor& features, double logit_scale,
                        bool frozen) {
  if (features->rank() != 2 || features->dim(1) != head.config.feature_dim) {
    throw std::invalid_argument("head_forward: features " + shape_str(features->shape) +
                                " do not match head dim " + std::to_string(head.config.feature_dim));
  }
  Tensor w = frozen ? detach(head.weight) : head.weight;
  Tensor fn = l2_normalize(features, 1);
  Tensor wn = l2_normalize(w, 1);
  HeadOutput out;
  out.cosines = matmul(fn, transpose(wn));
  out.probs = softmax_rows(scale(out.cosines, logit_scale));
  return out;
}

}  // namespace dlif
