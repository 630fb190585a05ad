// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "microlab/gp.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "microlab/error.hpp"

namespace microlab {

namespace {

constexpr double kSqrt5 = 2.23606797749978969641;

const std::vector<double> kLengthGrid = {0.05, 0.1, 0.2, 0.4, 0.8, 1.6};
const std::vector<double> kSignalGrid = {0.5, 1.0, 2.0};
const std::vector<double> kNoiseGrid = {1e-6, 1e-4, 1e-2, 1e-1};

struct Factor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};

Factor factorize(const Eigen::MatrixXd& k) {
  Factor f;
  f.llt.compute(k);
  if (f.llt.info() == Eigen::Success) return f;
  for (double j = 1e-10; j <= 1e-6 * 1.0001; j *= 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += j;
    f.llt.compute(kj);
    if (f.llt.info() == Eigen::Success) {
      f.jitter = j;
      return f;
    }
  }
  throw NumericalError("GP kernel matrix is not positive definite after jitter 1e-6");
}

Eigen::MatrixXd gram(const std::vector<std::vector<double>>& xs, const KernelHyper& hyper) {
  const auto n = static_cast<Eigen::Index>(xs.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) k(i, j) = k(j, i) = matern52(xs[i], xs[j], hyper);
  k.diagonal().array() += hyper.noise_var;
  return k;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

double matern52(const std::vector<double>& a, const std::vector<double>& b, const KernelHyper& hyper) {
  require(a.size() == b.size() && a.size() == hyper.length_scales.size(),
          "matern52: dimension mismatch");
  double r2 = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double t = (a[d] - b[d]) / hyper.length_scales[d];
    r2 += t * t;
  }
  const double r = std::sqrt(r2);
  return hyper.signal_var * (1.0 + kSqrt5 * r + 5.0 * r2 / 3.0) * std::exp(-kSqrt5 * r);
}

GPModel GPModel::fit(std::vector<std::vector<double>> xs, std::vector<double> ys, KernelHyper hyper) {
  require(!xs.empty() && xs.size() == ys.size(), "gp_fit: need at least one (x, y) observation");
  const std::size_t dims = xs[0].size();
  for (const auto& x : xs) require(x.size() == dims, "gp_fit: inconsistent input dimension");
  if (hyper.length_scales.empty()) hyper.length_scales.assign(dims, 0.3);
  require(hyper.length_scales.size() == dims, "gp_fit: one length scale per dimension required");
  for (double l : hyper.length_scales) require(l > 0.0, "gp_fit: length scales must be positive");
  require(hyper.signal_var > 0.0, "gp_fit: signal variance must be positive");
  hyper.noise_var = std::max(hyper.noise_var, kNoiseFloor);

  GPModel m;
  const auto n = static_cast<double>(ys.size());
  double mean = 0.0;
  for (double y : ys) mean += y;
  mean /= n;
  double var = 0.0;
  for (double y : ys) var += (y - mean) * (y - mean);
  const double sd = std::sqrt(var / n);
  m.y_mean_ = mean;
  m.y_scale_ = sd > 1e-12 ? sd : 1.0;

  Eigen::VectorXd z(static_cast<Eigen::Index>(ys.size()));
  for (std::size_t i = 0; i < ys.size(); ++i) z(static_cast<Eigen::Index>(i)) = (ys[i] - m.y_mean_) / m.y_scale_;

  Factor f = factorize(gram(xs, hyper));
  m.chol_ = std::move(f.llt);
  m.jitter_ = f.jitter;
  m.alpha_ = m.chol_.solve(z);
  const Eigen::MatrixXd l = m.chol_.matrixL();
  m.lml_ = -0.5 * z.dot(m.alpha_) - l.diagonal().array().log().sum() -
           0.5 * n * std::log(2.0 * std::numbers::pi);
  m.xs_ = std::move(xs);
  m.ys_ = std::move(ys);
  m.hyper_ = std::move(hyper);
  return m;
}

GPModel GPModel::fit_ml(std::vector<std::vector<double>> xs, std::vector<double> ys) {
  require(!xs.empty(), "gp_fit: need at least one observation");
  const std::size_t dims = xs[0].size();
  // Enumerate length-scale tuples as mixed-radix counters over the grid.
  std::size_t combos = 1;
  for (std::size_t d = 0; d < dims; ++d) combos *= kLengthGrid.size();

  KernelHyper best;
  double best_lml = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < combos; ++c) {
    KernelHyper h;
    std::size_t rest = c;
    for (std::size_t d = 0; d < dims; ++d) {
      h.length_scales.push_back(kLengthGrid[rest % kLengthGrid.size()]);
      rest /= kLengthGrid.size();
    }
    for (double s : kSignalGrid) {
      for (double nv : kNoiseGrid) {
        h.signal_var = s;
        h.noise_var = nv;
        double lml;
        try {
          lml = fit(xs, ys, h).log_marginal_likelihood();
        } catch (const NumericalError&) {
          continue;
        }
        if (lml > best_lml) {
          best_lml = lml;
          best = h;
        }
      }
    }
  }
  if (!std::isfinite(best_lml)) throw NumericalError("gp_fit: no grid point gave a positive-definite kernel");
  return fit(std::move(xs), std::move(ys), best);
}

Posterior GPModel::predict_standardized(const std::vector<double>& x) const {
  const auto n = static_cast<Eigen::Index>(xs_.size());
  Eigen::VectorXd k(n);
  for (Eigen::Index i = 0; i < n; ++i) k(i) = matern52(x, xs_[static_cast<std::size_t>(i)], hyper_);
  Posterior p;
  p.mean = k.dot(alpha_);
  const Eigen::VectorXd v = chol_.matrixL().solve(k);
  p.var = std::max(0.0, hyper_.signal_var - v.squaredNorm());
  return p;
}

Posterior GPModel::predict(const std::vector<double>& x) const {
  Posterior p = predict_standardized(x);
  p.mean = y_mean_ + y_scale_ * p.mean;
  p.var *= y_scale_ * y_scale_;
  return p;
}

double expected_improvement(double mu, double sigma, double best) {
  if (!(sigma > 0.0)) return std::max(0.0, mu - best);
  const double z = (mu - best) / sigma;
  return std::max(0.0, (mu - best) * normal_cdf(z) + sigma * normal_pdf(z));
}

double expected_improvement(const GPModel& model, const std::vector<double>& x, double best_y) {
  const Posterior p = model.predict(x);
  return expected_improvement(p.mean, std::sqrt(p.var), best_y);
}

}  // namespace microlab
