// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

// Training loss  L = H - log(J) + lambda * ||theta||^2  and IoU evaluation metrics.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "microlab/params.hpp"
#include "microlab/tensor.hpp"

namespace microlab {

inline constexpr double kDefaultClip = 1e-7;
inline constexpr double kDefaultIouEps = 1e-6;
inline constexpr double kDefaultL2 = 5e-4;

/// Mean binary cross entropy; yhat is clipped to [clip, 1 - clip] before the logs.
double bce(const Tensor& y, const Tensor& yhat, double clip = kDefaultClip);

/// Per-pixel smoothed IoU ratio averaged over all n entries:
///   (1/n) sum (y*yhat + eps) / (y + yhat - y*yhat + eps)
double soft_iou(const Tensor& y, const Tensor& yhat, double eps = kDefaultIouEps);

/// Modified Dice score J = 2 IoU / (IoU + 1). Requires iou > 0.
double dice_from_iou(double iou);

struct LossBreakdown {
  double H = 0.0;
  double IoU = 0.0;
  double J = 0.0;
  double l2 = 0.0;  // raw ||theta||^2
  double total = 0.0;
  double eps = kDefaultIouEps;
  double lambda = kDefaultL2;
};

struct CompositeLoss {
  LossBreakdown value;
  Tensor grad_yhat;  // dL/dyhat, same shape as yhat
  GradMap grad_params;  // 2 * lambda * theta for each differentiable parameter
};

/// Breakdown only (no gradient); `params` may be null for lambda * 0.
LossBreakdown composite_loss_value(const Tensor& y, const Tensor& yhat, const ParameterSet* params,
                                   double lambda = kDefaultL2, double eps = kDefaultIouEps,
                                   double clip = kDefaultClip);

/// Breakdown plus gradients with respect to yhat and the parameters.
CompositeLoss composite_loss(const Tensor& y, const Tensor& yhat, const ParameterSet* params,
                             double lambda = kDefaultL2, double eps = kDefaultIouEps,
                             double clip = kDefaultClip);

/// Mean multi-class cross entropy on per-pixel probabilities (N, C, H, W) against
/// integer class labels (N, 1, H, W). Writes dL/dprobs when `grad` is non-null.
double categorical_cross_entropy(const Tensor& labels, const Tensor& probs, Tensor* grad,
                                 double clip = kDefaultClip);

/// Foreground channel (index 1) of a (N, C, H, W) probability tensor, as (N, 1, H, W).
Tensor foreground_channel(const Tensor& probs);
/// Lift dL/d(foreground) back to a full dL/dprobs tensor (zeros on other channels).
Tensor lift_foreground_grad(const Tensor& grad_fg, std::size_t channels);

struct MeanCi {
  double mean = 0.0;
  double ci95_halfwidth = 0.0;
  std::size_t n = 0;
};

/// Mean and normal-approximation 95% half-width 1.96 * s / sqrt(n), s the sample
/// standard deviation. Requires n >= 2.
MeanCi mean_iou_ci(std::span<const double> scores);

struct ScoreRow {
  std::string task_id;
  std::size_t split = 0;
  double iou = 0.0;
};

struct EvalReport {
  std::vector<ScoreRow> per_task_scores;
  double mean = 0.0;
  double ci95_halfwidth = 0.0;
  std::size_t n = 0;
};

EvalReport make_eval_report(std::vector<ScoreRow> rows);

}  // namespace microlab
