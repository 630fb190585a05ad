// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

// Miniature encoder / residual-skip-decoder segmentation network.
//
// Topology for encoder_stages = K and rsd_skip_stage = s:
//
//   image (N,1,H,W)
//     stem   conv3x3 s1  -> BN -> ReLU                  base_channels,  H
//     enc_i  conv3x3 s2  -> BN -> ReLU  (i = 1..K)      base*2^i,       H/2^i
//   decoder input X = concat(enc_s, upsample(enc_K, 2^(K-s)))
//     rsd    a = CBR 1x1(X), b = CBR 3x3 dilation 2(X), c = broadcast(avgpool(X))
//            fused = CBR 3x3(concat(a, b, c))  -> rsd_out_channels
//            out   = fused + BN(conv1x1(X))   (identity when channels already match)
//     dropout -> head conv1x1 -> bilinear x2^s -> softmax over channels
//
// CBR = conv -> batch norm -> ReLU. Stage 0 denotes the stem.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "microlab/ops.hpp"
#include "microlab/params.hpp"

namespace microlab {

struct ModelConfig {
  std::size_t input_hw = 32;
  std::size_t base_channels = 8;
  std::size_t encoder_stages = 3;
  std::size_t rsd_skip_stage = 2;
  std::size_t rsd_out_channels = 16;
  double dropout_rate = 0.2;
  std::size_t num_output_channels = 2;

  /// Throws ContractError describing the first violated constraint.
  void validate() const;
  std::size_t stage_channels(std::size_t stage) const { return base_channels << stage; }
  std::size_t stage_hw(std::size_t stage) const { return input_hw >> stage; }
  std::size_t rsd_input_channels() const {
    return stage_channels(rsd_skip_stage) + stage_channels(encoder_stages);
  }
  bool has_projection() const { return rsd_input_channels() != rsd_out_channels; }

  bool operator==(const ModelConfig&) const = default;
};

/// Closed-form parameter count for a configuration (conv kernels + biases + BN gamma/beta).
std::size_t expected_param_count(const ModelConfig& cfg);

struct CbrCache {
  Tensor input;
  Tensor pre_bn;
  BatchNormCache bn;
  Tensor pre_act;
};

struct RsdCache {
  Tensor input;  // concat(skip, upsampled deep features)
  std::size_t skip_channels = 0;
  CbrCache branch_1x1, branch_dilated, fuse, proj;
  std::vector<std::size_t> fuse_split;
};

struct ForwardCache {
  Mode mode = Mode::train;
  std::vector<CbrCache> encoder;  // stem, enc1..encK
  RsdCache rsd;
  Tensor dropout_mask;
  Tensor head_input;
  Tensor probs;
};

class SegmentationNet {
 public:
  explicit SegmentationNet(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  /// He-normal conv kernels, zero biases, gamma = 1, beta = 0, running mean 0 / var 1.
  ParameterSet build(Rng& rng) const;

  /// Per-pixel class probabilities, shape (N, num_output_channels, H, W). Train
  /// mode applies dropout and updates running statistics in `params`.
  /// `dropout_rate` overrides the configured rate when set.
  Tensor forward(ParameterSet& params, const Tensor& images, Mode mode, Rng& rng,
                 ForwardCache* cache = nullptr,
                 std::optional<double> dropout_rate = std::nullopt) const;

  /// Inference-mode forward; never touches `params`.
  Tensor predict_probs(const ParameterSet& params, const Tensor& images) const;

  /// Gradient of a scalar loss with respect to every differentiable parameter,
  /// given dL/dprobs for the forward pass recorded in `cache`.
  GradMap backward(const ParameterSet& params, const ForwardCache& cache,
                   const Tensor& grad_probs) const;

  /// Residual skip decoder on already-aligned inputs.
  Tensor rsd_block(ParameterSet& params, const Tensor& features, const Tensor& skip_features,
                   Mode mode, RsdCache* cache = nullptr) const;
  /// Returns (grad wrt skip_features, grad wrt features); accumulates parameter grads.
  std::pair<Tensor, Tensor> rsd_backward(const ParameterSet& params, const RsdCache& cache,
                                         const Tensor& grad_out, GradMap& grads) const;

  /// Swap the head for a freshly initialized one with `channels` outputs.
  void reinit_head(ParameterSet& params, std::size_t channels, Rng& rng) const;

  BatchNormConfig bn_config() const { return bn_; }

 private:
  ModelConfig cfg_;
  BatchNormConfig bn_;
};

/// Per-pixel argmax over channels; ties resolve to the lower channel index, so
/// a binary head maps an exact 0.5/0.5 tie to background. Output (N,1,H,W) in {0,1}
/// for binary heads, class indices otherwise.
Tensor predict_mask(const Tensor& probs);
Tensor predict_mask(const SegmentationNet& net, const ParameterSet& params, const Tensor& images);

}  // namespace microlab
