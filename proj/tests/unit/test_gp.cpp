// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "microlab/error.hpp"
#include "microlab/gp.hpp"
#include "microlab/uho.hpp"
#include "gp_oracle.hpp"
#include "testing.hpp"

using namespace microlab;
using namespace microlab::testing;

TEST_CASE("Matern-5/2 kernel values") {
  KernelHyper h;
  h.signal_var = 2.0;
  h.length_scales = {0.5};
  CHECK(matern52({0.3}, {0.3}, h) == 2.0);
  const double r = 0.2 / 0.5;
  CHECK(matern52({0.1}, {0.3}, h) ==
        doctest::Approx(2.0 * (1 + std::sqrt(5.0) * r + 5.0 * r * r / 3.0) * std::exp(-std::sqrt(5.0) * r)));
  CHECK_THROWS_AS(matern52({0.1, 0.2}, {0.3}, h), ContractError);
}

TEST_CASE("GP posterior matches a dense brute-force solve") {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t dims = 1 + uniform_index(rng, 3);
    const std::size_t n = 2 + uniform_index(rng, 9);
    Matrix xs(n, std::vector<double>(dims));
    std::vector<double> ys(n);
    for (auto& x : xs)
      for (auto& v : x) v = uniform01(rng);
    for (auto& y : ys) y = uniform(rng, -2.0, 3.0);
    KernelHyper h;
    h.signal_var = uniform(rng, 0.5, 2.0);
    h.noise_var = std::pow(10.0, uniform(rng, -4.0, -1.0));
    for (std::size_t d = 0; d < dims; ++d) h.length_scales.push_back(uniform(rng, 0.1, 1.0));
    const GPModel gp = GPModel::fit(xs, ys, h);
    CHECK(gp.jitter() == 0.0);
    for (int q = 0; q < 5; ++q) {
      std::vector<double> x(dims);
      for (auto& v : x) v = uniform01(rng);
      const DenseOracle want = dense_posterior(xs, ys, h, x);
      const Posterior got = gp.predict(x);
      CHECK(std::abs(got.mean - want.mean) < 1e-8);
      CHECK(std::abs(got.var - want.var) < 1e-8);
    }
    CHECK(std::abs(gp.log_marginal_likelihood() - dense_posterior(xs, ys, h, xs[0]).lml) < 1e-8);
  }
}

TEST_CASE("GP interpolates noiseless observations") {
  KernelHyper h;
  h.length_scales = {0.3};
  const Matrix xs{{0.1}, {0.5}, {0.9}};
  const std::vector<double> ys{1.0, -1.0, 2.0};
  const GPModel gp = GPModel::fit(xs, ys, h);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(gp.predict(xs[i]).mean == doctest::Approx(ys[i]).epsilon(1e-4));
    CHECK(gp.predict(xs[i]).var < 1e-4);
  }
  CHECK(gp.predict({5.0}).var == doctest::Approx(gp.y_scale() * gp.y_scale()).epsilon(1e-6));
}

TEST_CASE("GP handles duplicate points and constant targets") {
  const Matrix xs{{0.2}, {0.2}, {0.2}};
  const std::vector<double> ys{0.5, 0.5, 0.5};
  const GPModel gp = GPModel::fit_ml(xs, ys);
  CHECK(gp.y_scale() == 1.0);
  CHECK(gp.predict({0.2}).mean == doctest::Approx(0.5));
  CHECK(std::isfinite(gp.log_marginal_likelihood()));
}

TEST_CASE("marginal-likelihood grid search beats its neighbours") {
  Rng rng(2);
  Matrix xs;
  std::vector<double> ys;
  for (int i = 0; i < 10; ++i) {
    const double x = uniform01(rng);
    xs.push_back({x});
    ys.push_back(std::sin(6.0 * x));
  }
  const GPModel best = GPModel::fit_ml(xs, ys);
  for (double l : {0.05, 0.1, 0.2, 0.4, 0.8, 1.6}) {
    KernelHyper h = best.hyper();
    h.length_scales = {l};
    CHECK(GPModel::fit(xs, ys, h).log_marginal_likelihood() <= best.log_marginal_likelihood() + 1e-12);
  }
}

TEST_CASE("expected improvement closed form") {
  const double phi0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  CHECK(expected_improvement(1.0, 1.0, 1.0) == doctest::Approx(phi0).epsilon(1e-14));
  CHECK(phi0 == doctest::Approx(0.3989422804014327));
  CHECK(expected_improvement(0.5, 2.0, 0.5) == doctest::Approx(2.0 * phi0).epsilon(1e-14));
  CHECK(expected_improvement(2.0, 0.0, 1.0) == 1.0);
  CHECK(expected_improvement(0.0, 0.0, 1.0) == 0.0);
  double prev = -1.0;
  for (double mu = -2.0; mu <= 2.0; mu += 0.25) {
    const double ei = expected_improvement(mu, 0.7, 0.0);
    CHECK(ei > prev);
    CHECK(ei >= std::max(0.0, mu));
    prev = ei;
  }
}

TEST_CASE("expected improvement matches Monte Carlo") {
  Rng rng(3);
  for (auto [mu, sigma, best] : {std::tuple{0.2, 0.5, 0.4}, std::tuple{1.0, 0.3, 0.0}, std::tuple{-1.0, 1.5, 0.5}}) {
    double s = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) s += std::max(0.0, mu + sigma * normal01(rng) - best);
    CHECK(std::abs(s / n - expected_improvement(mu, sigma, best)) < 1e-3);
  }
}

TEST_CASE("Halton points") {
  CHECK(halton_point(1, 2) == std::vector<double>{0.5, 1.0 / 3.0});
  const auto p = halton_point(5, 3);
  CHECK(p[0] == doctest::Approx(0.625));
  CHECK(p[1] == doctest::Approx(7.0 / 9.0));
  CHECK(p[2] == doctest::Approx(0.04));
  CHECK_THROWS_AS(halton_point(1, 11), ContractError);
}

TEST_CASE("Bayesian optimization recovers a planted optimum") {
  const SearchSpace space;
  std::size_t hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng plant(derive_seed(seed, 1));
    const double target = uniform(plant, std::log10(0.001), std::log10(0.025));
    auto objective = [&](const std::vector<double>& x) {
      const double l = std::log10(space.decode(x, UpdateHyperparams{}).lr);
      return -(l - target) * (l - target);
    };
    Rng rng(seed);
    const BayesOptResult r = bayes_optimize(space, 16, objective, rng);
    CHECK(r.xs.size() == 16);
    CHECK(r.ys[r.best_index] == *std::max_element(r.ys.begin(), r.ys.end()));
    const double got = std::log10(space.decode(r.xs[r.best_index], UpdateHyperparams{}).lr);
    if (std::abs(got - target) <= 0.3) ++hits;
  }
  CHECK(hits >= 18);
}

TEST_CASE("Bayesian optimization is reproducible") {
  const SearchSpace space = SearchSpace::extended_space();
  auto objective = [](const std::vector<double>& x) { return -std::pow(x[0] - 0.3, 2) - std::pow(x[3] - 0.6, 2); };
  Rng a(4), b(4);
  const BayesOptResult ra = bayes_optimize(space, 8, objective, a);
  const BayesOptResult rb = bayes_optimize(space, 8, objective, b);
  CHECK(ra.xs == rb.xs);
  CHECK(ra.ys == rb.ys);
  CHECK_THROWS_AS(bayes_optimize(space, 1, objective, a), ContractError);
}
