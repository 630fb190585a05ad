// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "microlab/losses.hpp"

#include <algorithm>
#include <cmath>

#include "microlab/error.hpp"

namespace microlab {

namespace {

void check_pair(const Tensor& y, const Tensor& yhat, const char* op) {
  require(y.size() == yhat.size() && !y.empty(),
          std::string(op) + ": label " + y.shape_string() + " and prediction " +
              yhat.shape_string() + " must have equal, nonzero size");
}

}  // namespace

double bce(const Tensor& y, const Tensor& yhat, double clip) {
  check_pair(y, yhat, "bce");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::clamp(yhat[i], clip, 1.0 - clip);
    s += y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
  }
  return -s / static_cast<double>(y.size());
}

double soft_iou(const Tensor& y, const Tensor& yhat, double eps) {
  check_pair(y, yhat, "soft_iou");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double inter = y[i] * yhat[i];
    s += (inter + eps) / (y[i] + yhat[i] - inter + eps);
  }
  return s / static_cast<double>(y.size());
}

double dice_from_iou(double iou) {
  require(iou > 0.0, "dice_from_iou: IoU must be positive, got " + std::to_string(iou));
  return 2.0 * iou / (iou + 1.0);
}

LossBreakdown composite_loss_value(const Tensor& y, const Tensor& yhat, const ParameterSet* params,
                                   double lambda, double eps, double clip) {
  LossBreakdown b;
  b.eps = eps;
  b.lambda = lambda;
  b.H = bce(y, yhat, clip);
  b.IoU = soft_iou(y, yhat, eps);
  b.J = dice_from_iou(b.IoU);
  b.l2 = params ? params->squared_norm() : 0.0;
  b.total = b.H - std::log(b.J) + lambda * b.l2;
  return b;
}

CompositeLoss composite_loss(const Tensor& y, const Tensor& yhat, const ParameterSet* params,
                             double lambda, double eps, double clip) {
  CompositeLoss out;
  out.value = composite_loss_value(y, yhat, params, lambda, eps, clip);
  const auto n = static_cast<double>(y.size());
  // d(-log J)/dIoU with J = 2 IoU / (IoU + 1)
  const double iou = out.value.IoU;
  const double d_dice = -1.0 / iou + 1.0 / (iou + 1.0);
  out.grad_yhat = Tensor(yhat.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double t = y[i], p = yhat[i];
    double dh = 0.0;
    if (p > clip && p < 1.0 - clip) dh = (-t / p + (1.0 - t) / (1.0 - p)) / n;
    const double num = t * p + eps;
    const double den = t + p - t * p + eps;
    const double dratio = (t * den - num * (1.0 - t)) / (den * den);
    out.grad_yhat[i] = dh + d_dice * dratio / n;
  }
  if (params) {
    for (const auto& e : params->params()) {
      Tensor g = e.value;
      g *= 2.0 * lambda;
      out.grad_params.emplace(e.name, std::move(g));
    }
  }
  return out;
}

double categorical_cross_entropy(const Tensor& labels, const Tensor& probs, Tensor* grad,
                                 double clip) {
  require(probs.rank() == 4 && labels.rank() == 4 && labels.dim(1) == 1 &&
              labels.dim(0) == probs.dim(0) && labels.dim(2) == probs.dim(2) &&
              labels.dim(3) == probs.dim(3),
          "categorical_cross_entropy: labels " + labels.shape_string() +
              " do not match probabilities " + probs.shape_string());
  const std::size_t n_img = probs.dim(0), c = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
  const auto n = static_cast<double>(n_img * hw);
  if (grad) *grad = Tensor(probs.shape());
  double s = 0.0;
  for (std::size_t img = 0; img < n_img; ++img) {
    for (std::size_t i = 0; i < hw; ++i) {
      const auto cls = static_cast<std::size_t>(labels[img * hw + i]);
      require(cls < c, "categorical_cross_entropy: label out of range");
      const std::size_t idx = (img * c + cls) * hw + i;
      const double p = probs[idx];
      s -= std::log(std::clamp(p, clip, 1.0 - clip));
      if (grad && p > clip && p < 1.0 - clip) (*grad)[idx] = -1.0 / (p * n);
    }
  }
  return s / n;
}

Tensor foreground_channel(const Tensor& probs) {
  require(probs.rank() == 4 && probs.dim(1) >= 2, "foreground_channel: expected (N, C>=2, H, W)");
  const std::size_t n_img = probs.dim(0), c = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
  Tensor fg({n_img, 1, probs.dim(2), probs.dim(3)});
  for (std::size_t img = 0; img < n_img; ++img)
    std::copy(probs.raw() + (img * c + 1) * hw, probs.raw() + (img * c + 2) * hw, fg.raw() + img * hw);
  return fg;
}

Tensor lift_foreground_grad(const Tensor& grad_fg, std::size_t channels) {
  const std::size_t n_img = grad_fg.dim(0), hw = grad_fg.dim(2) * grad_fg.dim(3);
  Tensor g({n_img, channels, grad_fg.dim(2), grad_fg.dim(3)});
  for (std::size_t img = 0; img < n_img; ++img)
    std::copy(grad_fg.raw() + img * hw, grad_fg.raw() + (img + 1) * hw,
              g.raw() + (img * channels + 1) * hw);
  return g;
}

MeanCi mean_iou_ci(std::span<const double> scores) {
  require(scores.size() >= 2, "mean_iou_ci: need at least two scores");
  const auto n = static_cast<double>(scores.size());
  double s = 0.0;
  for (double v : scores) s += v;
  const double mean = s / n;
  double sq = 0.0;
  for (double v : scores) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / (n - 1.0));
  return {mean, 1.96 * sd / std::sqrt(n), scores.size()};
}

EvalReport make_eval_report(std::vector<ScoreRow> rows) {
  EvalReport r;
  std::vector<double> scores;
  scores.reserve(rows.size());
  for (const auto& row : rows) scores.push_back(row.iou);
  const MeanCi m = mean_iou_ci(scores);
  r.per_task_scores = std::move(rows);
  r.mean = m.mean;
  r.ci95_halfwidth = m.ci95_halfwidth;
  r.n = m.n;
  return r;
}

}  // namespace microlab
