#pragma once

#include <array>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dlif/stylecross.hpp"
#include "dlif/tensor.hpp"

namespace dlif {

struct EncoderConfig {
  int input_size = 32;                        // H == W, divisible by 8
  std::array<int, 3> stage_channels{16, 32, 64};  // low / mid / high
  int feature_dim = 64;                       // == stage_channels[2]
  bool cwsa_enabled = false;
  int cwsa_reduction = 4;

  void validate() const;
};

// Squeeze-style gate computed from per-channel mean and variance.
struct CwsaParams {
  Tensor w1, b1;  // 2C -> C/r
  Tensor w2, b2;  // C/r -> C
};

struct ConvStageParams {
  Tensor wa, ba;  // 3x3 stride-2
  Tensor wb, bb;  // 3x3 stride-1
};

struct EncoderParams {
  std::array<ConvStageParams, 3> stages;
  CwsaParams cwsa;  // empty tensors when disabled
  EncoderConfig config;

  std::vector<Tensor> all() const;
  std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
};

struct HeadConfig {
  enum Kind { classifier, discriminator } kind = classifier;
  int num_classes = 2;
  int feature_dim = 64;
};

struct HeadParams {
  HeadConfig config;
  Tensor weight;  // [num_classes, N], rows L2-normalized at use
};

// Same-label permutations for the style-cross hooks of one encoder pass.
struct LevelPairings {
  std::vector<int> group_labels;            // one per batch sample
  std::map<Level, std::vector<int>> perms;  // one per active level
};

struct EncodeResult {
  // One pooled pre-normalization feature set [B,N] per pass (one for plain or
  // cascaded plans, one per level for parallel plans).
  std::vector<Tensor> features;
  // Per pass: the low/mid/high stage outputs.
  std::vector<std::array<Tensor, 3>> intermediates;
};

struct HeadOutput {
  Tensor cosines;  // [B, num_classes]
  Tensor probs;    // softmax of scale * cosines
};

EncoderParams init_encoder(const EncoderConfig& config, std::mt19937_64& rng);
HeadParams init_head(const HeadConfig& config, std::mt19937_64& rng);

Tensor cwsa_forward(const Tensor& x_nchw, const CwsaParams& params);

EncodeResult encode(const EncoderParams& enc, const Tensor& batch_nchw, const StylePlan* plan,
                    const LevelPairings* pairing);

// Cosine logits against L2-normalized class rows, probabilities over scaled
// logits. frozen detaches the class weights so no gradient reaches them.
HeadOutput head_forward(const HeadParams& head, const Tensor& features, double logit_scale,
                        bool frozen = false);

}  // namespace dlif
