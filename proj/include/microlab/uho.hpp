// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

// Update-hyperparameter optimization: Bayesian optimization of the test-time
// update routine on validation tasks, with early stopping choosing the step count.

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "microlab/gp.hpp"
#include "microlab/meta.hpp"

namespace microlab {

/// Optimization domain. Candidates live in the unit cube: the learning rate is
/// log10-warped, the other dimensions are linear, inner_batch is rounded.
struct SearchSpace {
  double lr_low = 0.0005;
  double lr_high = 0.05;
  bool extended = false;
  double dropout_low = 0.2, dropout_high = 0.5;
  double aug_low = 0.5, aug_high = 1.0;
  std::size_t batch_low = 1, batch_high = 10;
  std::size_t max_steps = 20;
  std::size_t patience = 5;

  /// The extended-space defaults (four dimensions, 80 steps, patience 20).
  static SearchSpace extended_space();

  void validate() const;
  std::size_t dims() const { return extended ? 4 : 1; }
  /// Unit-cube point to hyperparameters; fields not searched come from `base`.
  UpdateHyperparams decode(const std::vector<double>& unit, const UpdateHyperparams& base) const;
  std::vector<double> encode(const UpdateHyperparams& omega) const;
  /// Snap integer dimensions so the point decodes and re-encodes to itself.
  std::vector<double> snap(std::vector<double> unit) const;
};

/// Halton sequence point `index` (1-based is conventional; 0 maps to the origin)
/// in `dims` dimensions, bases 2, 3, 5, 7, ...
std::vector<double> halton_point(std::size_t index, std::size_t dims);

struct BayesOptResult {
  std::vector<std::vector<double>> xs;  // evaluated unit-cube points, in order
  std::vector<double> ys;
  std::size_t best_index = 0;
  std::optional<GPModel> gp_final;
};

/// Maximizes `objective` over the unit cube with `budget` evaluations:
/// the first max(1, budget / 2) uniform random, the rest each maximizing EI
/// over 1024 randomly shifted Halton candidates under a GP fit to all
/// observations so far.
BayesOptResult bayes_optimize(const SearchSpace& space, std::size_t budget,
                              const std::function<double(const std::vector<double>&)>& objective,
                              Rng& rng);

struct EarlyStopResult {
  double best_iou = 0.0;
  std::size_t best_step = 0;
};

/// Adapts a copy of theta on `adapt` one step at a time, scoring `heldout` after
/// each step; stops after `patience` steps without strict improvement.
EarlyStopResult early_stopping_adapt(const Learner& learner, const ParameterSet& theta,
                                     std::span<const Example> adapt, std::span<const Example> heldout,
                                     const UpdateHyperparams& omega, std::size_t patience,
                                     std::size_t max_steps, Rng& rng);

struct UHOTraceRow {
  UpdateHyperparams omega;  // steps holds the median early-stop step
  double objective = 0.0;   // mean best held-out IoU over validation episodes
};

struct UHOResult {
  UpdateHyperparams omega_test;
  std::vector<UHOTraceRow> trace;
  std::size_t best_index = 0;
  std::optional<GPModel> gp_final;
};

struct UHOOptions {
  std::size_t budget = 16;
  std::size_t episodes = 32;    // validation episodes per candidate, cycling over tasks
  std::size_t adapt_shots = 5;  // remaining examples of each task are held out
  std::size_t threads = 1;
};

/// Every candidate is scored on the same episodes (same splits and streams).
/// omega_test takes the best candidate's values with steps set to the lower
/// median of its early-stop steps.
UHOResult uho_optimize(const Learner& learner, const ParameterSet& theta,
                       std::span<const Task> val_tasks, const SearchSpace& space,
                       const UpdateHyperparams& base, const UHOOptions& options, Rng& rng);

}  // namespace microlab
