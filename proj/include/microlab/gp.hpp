// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

// Exact Gaussian-process regression with a Matern-5/2 kernel and the
// expected-improvement acquisition (maximization convention).

#pragma once

#include <Eigen/Dense>
#include <vector>

namespace microlab {

struct KernelHyper {
  double signal_var = 1.0;
  std::vector<double> length_scales;  // one per input dimension
  double noise_var = 1e-6;
};

inline constexpr double kNoiseFloor = 1e-6;

/// k(a, b) = s^2 (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r), r the length-scaled distance.
double matern52(const std::vector<double>& a, const std::vector<double>& b, const KernelHyper& hyper);

struct Posterior {
  double mean = 0.0;
  double var = 0.0;
};

class GPModel {
 public:
  /// Zero-mean GP on standardized targets. Noise is floored at kNoiseFloor;
  /// if the Cholesky factorization fails, diagonal jitter escalates from 1e-10
  /// to 1e-6 before NumericalError is raised.
  static GPModel fit(std::vector<std::vector<double>> xs, std::vector<double> ys, KernelHyper hyper);

  /// Selects length scales (per dimension), signal and noise variance from a
  /// fixed grid by maximizing the log marginal likelihood, then fits.
  static GPModel fit_ml(std::vector<std::vector<double>> xs, std::vector<double> ys);

  /// Posterior in the units of the observed targets. Variance is clamped at 0.
  Posterior predict(const std::vector<double>& x) const;
  /// Posterior of the standardized targets (prior mean 0, prior variance signal_var).
  Posterior predict_standardized(const std::vector<double>& x) const;

  /// Log marginal likelihood of the standardized targets.
  double log_marginal_likelihood() const { return lml_; }

  const KernelHyper& hyper() const { return hyper_; }
  const std::vector<std::vector<double>>& xs() const { return xs_; }
  const std::vector<double>& ys() const { return ys_; }
  double y_mean() const { return y_mean_; }
  double y_scale() const { return y_scale_; }
  double jitter() const { return jitter_; }
  std::size_t dims() const { return xs_.empty() ? 0 : xs_[0].size(); }

 private:
  std::vector<std::vector<double>> xs_;
  std::vector<double> ys_;
  KernelHyper hyper_;
  double y_mean_ = 0.0, y_scale_ = 1.0, jitter_ = 0.0, lml_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::VectorXd alpha_;
};

/// EI for maximization: (mu - best) Phi(z) + sigma phi(z), z = (mu - best) / sigma;
/// max(0, mu - best) when sigma is 0.
double expected_improvement(double mu, double sigma, double best);
double expected_improvement(const GPModel& model, const std::vector<double>& x, double best_y);

}  // namespace microlab
