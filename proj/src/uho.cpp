// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "microlab/uho.hpp"

#include <algorithm>
#include <cmath>

#include "microlab/error.hpp"
#include "microlab/parallel.hpp"

namespace microlab {

namespace {

constexpr std::size_t kAcquisitionCandidates = 1024;
constexpr unsigned kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29};

double to_unit(double v, double lo, double hi) { return std::clamp((v - lo) / (hi - lo), 0.0, 1.0); }
double from_unit(double u, double lo, double hi) { return lo + std::clamp(u, 0.0, 1.0) * (hi - lo); }

}  // namespace

SearchSpace SearchSpace::extended_space() {
  SearchSpace s;
  s.extended = true;
  s.max_steps = 80;
  s.patience = 20;
  return s;
}

void SearchSpace::validate() const {
  require(lr_low > 0.0 && lr_low < lr_high && std::isfinite(lr_high), "SearchSpace: need 0 < lr_low < lr_high");
  if (extended) {
    require(dropout_low >= 0.0 && dropout_low < dropout_high && dropout_high < 1.0,
            "SearchSpace: dropout bounds must satisfy 0 <= low < high < 1");
    require(aug_low >= 0.0 && aug_low < aug_high && aug_high <= 1.0,
            "SearchSpace: aug bounds must satisfy 0 <= low < high <= 1");
    require(batch_low >= 1 && batch_low < batch_high, "SearchSpace: batch bounds must satisfy 1 <= low < high");
  }
  require(patience >= 1, "SearchSpace: patience must be at least 1");
}

UpdateHyperparams SearchSpace::decode(const std::vector<double>& unit, const UpdateHyperparams& base) const {
  require(unit.size() == dims(), "SearchSpace::decode: wrong dimension");
  UpdateHyperparams w = base;
  w.lr = std::pow(10.0, from_unit(unit[0], std::log10(lr_low), std::log10(lr_high)));
  if (extended) {
    w.dropout_rate = from_unit(unit[1], dropout_low, dropout_high);
    w.aug_rate = from_unit(unit[2], aug_low, aug_high);
    w.inner_batch = static_cast<std::size_t>(
        std::lround(from_unit(unit[3], static_cast<double>(batch_low), static_cast<double>(batch_high))));
  }
  return w;
}

std::vector<double> SearchSpace::encode(const UpdateHyperparams& omega) const {
  std::vector<double> u{to_unit(std::log10(omega.lr), std::log10(lr_low), std::log10(lr_high))};
  if (extended) {
    u.push_back(to_unit(omega.dropout_rate, dropout_low, dropout_high));
    u.push_back(to_unit(omega.aug_rate, aug_low, aug_high));
    u.push_back(to_unit(static_cast<double>(omega.inner_batch), static_cast<double>(batch_low),
                        static_cast<double>(batch_high)));
  }
  return u;
}

std::vector<double> SearchSpace::snap(std::vector<double> unit) const {
  if (extended) {
    const double lo = static_cast<double>(batch_low), hi = static_cast<double>(batch_high);
    unit[3] = to_unit(std::round(from_unit(unit[3], lo, hi)), lo, hi);
  }
  return unit;
}

std::vector<double> halton_point(std::size_t index, std::size_t dims) {
  require(dims <= std::size(kPrimes), "halton_point: at most 10 dimensions");
  std::vector<double> p(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    const unsigned base = kPrimes[d];
    double f = 1.0, r = 0.0;
    for (std::size_t i = index; i > 0; i /= base) {
      f /= base;
      r += f * static_cast<double>(i % base);
    }
    p[d] = r;
  }
  return p;
}

BayesOptResult bayes_optimize(const SearchSpace& space, std::size_t budget,
                              const std::function<double(const std::vector<double>&)>& objective,
                              Rng& rng) {
  require(budget >= 2, "uho: budget must be at least 2");
  space.validate();
  const std::size_t dims = space.dims();
  const std::size_t n_random = std::max<std::size_t>(1, budget / 2);
  BayesOptResult r;
  for (std::size_t i = 0; i < budget; ++i) {
    std::vector<double> x(dims);
    if (i < n_random) {
      for (auto& v : x) v = uniform01(rng);
    } else {
      const GPModel gp = GPModel::fit_ml(r.xs, r.ys);
      const double best = *std::max_element(r.ys.begin(), r.ys.end());
      std::vector<double> shift(dims);
      for (auto& v : shift) v = uniform01(rng);
      double best_ei = -1.0;
      for (std::size_t c = 1; c <= kAcquisitionCandidates; ++c) {
        std::vector<double> cand = halton_point(c, dims);
        for (std::size_t d = 0; d < dims; ++d) cand[d] = std::fmod(cand[d] + shift[d], 1.0);
        cand = space.snap(std::move(cand));
        const double ei = expected_improvement(gp, cand, best);
        if (ei > best_ei) {
          best_ei = ei;
          x = std::move(cand);
        }
      }
    }
    x = space.snap(std::move(x));
    const double y = objective(x);
    r.xs.push_back(std::move(x));
    r.ys.push_back(y);
    if (y > r.ys[r.best_index]) r.best_index = r.ys.size() - 1;
  }
  r.gp_final = GPModel::fit_ml(r.xs, r.ys);
  return r;
}

EarlyStopResult early_stopping_adapt(const Learner& learner, const ParameterSet& theta,
                                     std::span<const Example> adapt, std::span<const Example> heldout,
                                     const UpdateHyperparams& omega, std::size_t patience,
                                     std::size_t max_steps, Rng& rng) {
  require(!adapt.empty() && !heldout.empty(), "early_stopping_adapt: need adaptation and held-out examples");
  require(patience >= 1, "early_stopping_adapt: patience must be at least 1");
  omega.validate();
  EarlyStopResult r;
  r.best_iou = learner.evaluate_iou(theta, heldout);
  if (max_steps == 0) return r;
  ParameterSet params = theta;
  std::size_t since_best = 0;
  for (std::size_t step = 1; step <= max_steps; ++step) {
    inner_step(learner, params, adapt, omega, rng);
    const double iou = learner.evaluate_iou(params, heldout);
    if (iou > r.best_iou) {
      r.best_iou = iou;
      r.best_step = step;
      since_best = 0;
    } else if (++since_best >= patience) {
      break;
    }
  }
  return r;
}

UHOResult uho_optimize(const Learner& learner, const ParameterSet& theta,
                       std::span<const Task> val_tasks, const SearchSpace& space,
                       const UpdateHyperparams& base, const UHOOptions& options, Rng& rng) {
  require(!val_tasks.empty(), "uho: no validation tasks");
  require(options.episodes >= 1, "uho: episodes must be at least 1");
  space.validate();

  // Episode splits and per-episode streams are fixed up front and shared by every candidate.
  const std::uint64_t crn_seed = rng();
  struct EpisodeData {
    std::vector<Example> adapt, heldout;
  };
  std::vector<EpisodeData> episodes(options.episodes);
  for (std::size_t e = 0; e < options.episodes; ++e) {
    Rng split_rng(derive_seed(crn_seed, e, 1));
    auto [a, h] = random_split(val_tasks[e % val_tasks.size()], options.adapt_shots, split_rng);
    episodes[e] = {std::move(a), std::move(h)};
  }

  UHOResult result;
  auto evaluate = [&](const std::vector<double>& x) {
    const UpdateHyperparams omega = space.decode(x, base);
    std::vector<EarlyStopResult> per(options.episodes);
    parallel_for(options.episodes, options.threads, [&](std::size_t e) {
      Rng ep_rng(derive_seed(crn_seed, e, 2));
      per[e] = early_stopping_adapt(learner, theta, episodes[e].adapt, episodes[e].heldout, omega,
                                    space.patience, space.max_steps, ep_rng);
    });
    double mean = 0.0;
    std::vector<std::size_t> steps;
    for (const auto& p : per) {
      mean += p.best_iou;
      steps.push_back(p.best_step);
    }
    mean /= static_cast<double>(per.size());
    std::sort(steps.begin(), steps.end());
    UHOTraceRow row;
    row.omega = omega;
    row.omega.steps = steps[(steps.size() - 1) / 2];
    row.objective = mean;
    result.trace.push_back(row);
    return mean;
  };

  BayesOptResult bo = bayes_optimize(space, options.budget, evaluate, rng);
  result.best_index = bo.best_index;
  result.gp_final = std::move(bo.gp_final);
  result.omega_test = result.trace[bo.best_index].omega;
  result.omega_test.mode_tag = OmegaTag::test;
  return result;
}

}  // namespace microlab
