// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

// Forward and backward kernels for every layer of the segmentation network.
// Each backward takes the upstream gradient plus whatever the forward recorded
// and returns gradients for the op's inputs and parameters.

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "microlab/rng.hpp"
#include "microlab/tensor.hpp"

namespace microlab {

enum class Mode { train, inference };

/// Gradient of a layer with respect to its input and its named parameters.
struct LayerGradients {
  Tensor grad_input;
  std::map<std::string, Tensor> grad_params;
};

// ---------------------------------------------------------------------------
// conv2d

enum class Padding { same, valid };

struct ConvSpec {
  int stride = 1;
  int dilation = 1;
  Padding padding = Padding::same;
};

struct ConvGeometry {
  std::size_t out_h = 0, out_w = 0;
  std::size_t pad_top = 0, pad_left = 0;
};

/// Output extents and leading padding for one spatial layout. "same" padding is
/// symmetric with the odd pixel going to the bottom/right.
ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t k_h, std::size_t k_w,
                           const ConvSpec& spec);

/// Cross-correlation. kernel is (out_channels, in_channels, kh, kw); bias is (out_channels).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, const ConvSpec& spec);

/// grad_params keys: "kernel", "bias".
LayerGradients conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                               const ConvSpec& spec);

// ---------------------------------------------------------------------------
// batch normalization

struct BatchNormConfig {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Saved state for the backward pass.
struct BatchNormCache {
  Mode mode = Mode::train;
  Tensor normalized;             // x_hat
  std::vector<double> inv_std;   // per channel
};

/// Per-channel normalization. In train mode the batch statistics are used and
/// running_mean / running_var are updated by EMA (unbiased variance); in
/// inference mode the running statistics are used and left untouched.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 Tensor& running_mean, Tensor& running_var, Mode mode,
                 const BatchNormConfig& cfg, BatchNormCache* cache = nullptr);

/// grad_params keys: "gamma", "beta".
LayerGradients batchnorm_backward(const BatchNormCache& cache, const Tensor& gamma,
                                  const Tensor& grad_out);

// ---------------------------------------------------------------------------
// pointwise and shape ops

Tensor relu(const Tensor& input);
/// Gradient passes where the forward input was strictly positive.
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

/// (N, C, H, W) -> (N, C, 1, 1) spatial mean.
Tensor global_avgpool(const Tensor& input);
Tensor global_avgpool_backward(const Tensor& grad_out, std::size_t h, std::size_t w);

/// (N, C, 1, 1) -> (N, C, H, W) replication.
Tensor broadcast_spatial(const Tensor& pooled, std::size_t h, std::size_t w);
Tensor broadcast_spatial_backward(const Tensor& grad_out);

/// Bilinear interpolation by an integer factor, half-pixel centres (align_corners = false).
Tensor bilinear_upsample(const Tensor& input, int factor);
Tensor bilinear_upsample_backward(const Tensor& grad_out, int factor);

/// Inverted dropout. The applied multiplier (0 or 1/(1-rate)) is written to *mask
/// so the backward pass reuses it. Inference mode and rate 0 are the identity.
Tensor dropout(const Tensor& input, double rate, Mode mode, Rng& rng, Tensor* mask = nullptr);
Tensor dropout_backward(const Tensor& mask, const Tensor& grad_out);

/// Channel-axis concatenation of tensors with equal batch and spatial extents.
Tensor concat_channels(std::span<const Tensor* const> parts);
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels: split by the given channel counts.
std::vector<Tensor> split_channels(const Tensor& joined, std::span<const std::size_t> channels);

/// Softmax over the channel axis of a 4-D tensor.
Tensor softmax_channels(const Tensor& logits);
Tensor softmax_channels_backward(const Tensor& probs, const Tensor& grad_probs);

}  // namespace microlab
