// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

// Dense brute-force Gaussian-process posterior used as an oracle for GPModel.

#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "microlab/gp.hpp"

namespace microlab::testing {

using Matrix = std::vector<std::vector<double>>;

/// Gauss-Jordan inverse with partial pivoting; also returns log|det|.
inline Matrix dense_inverse(Matrix a, double& log_det) {
  const std::size_t n = a.size();
  Matrix inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  log_det = 0.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(inv[col], inv[piv]);
    const double p = a[col][col];
    log_det += std::log(std::abs(p));
    for (std::size_t j = 0; j < n; ++j) {
      a[col][j] /= p;
      inv[col][j] /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

/// Matern-5/2 written out independently of the library.
inline double kernel(const std::vector<double>& a, const std::vector<double>& b, const KernelHyper& h) {
  double r2 = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) r2 += std::pow((a[d] - b[d]) / h.length_scales[d], 2);
  const double r = std::sqrt(r2);
  return h.signal_var * (1.0 + std::sqrt(5.0) * r + 5.0 / 3.0 * r2) * std::exp(-std::sqrt(5.0) * r);
}

struct DenseOracle {
  double mean, var, lml;
};

inline DenseOracle dense_posterior(const Matrix& xs, const std::vector<double>& ys, const KernelHyper& h,
                            const std::vector<double>& x) {
  const std::size_t n = xs.size();
  double mu = 0.0;
  for (double y : ys) mu += y;
  mu /= static_cast<double>(n);
  double sd = 0.0;
  for (double y : ys) sd += (y - mu) * (y - mu);
  sd = std::sqrt(sd / static_cast<double>(n));
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = (ys[i] - mu) / sd;
  Matrix k(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) k[i][j] = kernel(xs[i], xs[j], h) + (i == j ? h.noise_var : 0.0);
  double log_det = 0.0;
  const Matrix inv = dense_inverse(k, log_det);
  std::vector<double> ks(n), alpha(n, 0.0), v(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) ks[i] = kernel(x, xs[i], h);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      alpha[i] += inv[i][j] * z[j];
      v[i] += inv[i][j] * ks[j];
    }
  double m = 0.0, q = 0.0, fit = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m += ks[i] * alpha[i];
    q += ks[i] * v[i];
    fit += z[i] * alpha[i];
  }
  const double lml = -0.5 * fit - 0.5 * log_det - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  return {mu + sd * m, sd * sd * (h.signal_var - q), lml};
}

}  // namespace microlab::testing
