// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

// Diagnostics: weight-update distances, the empirical generalization gap and
// k-shot scaling curves.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "microlab/losses.hpp"
#include "microlab/meta.hpp"
#include "microlab/uho.hpp"

namespace microlab {

struct BlockDistance {
  std::string block;
  std::optional<double> d2;  // unset when either block has zero norm
  double d3 = 0.0;
};

struct DistanceReport {
  double d1 = 0.0;
  std::vector<BlockDistance> per_block;
};

/// d1 = ||theta - theta_tau||; per block d2 = || v/|v| - u/|u| ||, d3 = mean |v - u|.
/// Running statistics are excluded.
DistanceReport weight_distances(const ParameterSet& theta, const ParameterSet& theta_tau);

struct TaggedInit {
  std::string tag;
  ParameterSet params;
  UpdateHyperparams few_shot_omega;  // used by kshot_curve for k below the threshold
};

struct DistanceRow {
  std::string init_tag;
  std::string task_id;
  std::size_t repeat = 0;
  double d1 = 0.0;
};

struct BlockSummary {
  std::string init_tag;
  std::string block;
  std::optional<double> d2;  // mean over samples where defined
  double d3 = 0.0;
};

struct DistanceStudy {
  std::vector<DistanceRow> rows;
  std::vector<BlockSummary> blocks;
  std::vector<std::pair<std::string, MeanCi>> d1_summary;  // per init, in input order
};

/// For each init, task and repeat: adapt on `shots` examples with omega and
/// record weight_distances. Every init sees the same splits and streams.
DistanceStudy distance_study(const Learner& learner, std::span<const TaggedInit> inits,
                             std::span<const Task> tasks, const UpdateHyperparams& omega,
                             std::size_t shots, std::size_t repeats, std::uint64_t seed);

struct GapRegime {
  UpdateHyperparams omega;
  std::size_t shots = 5;
};

struct GapReport {
  std::vector<std::pair<std::string, double>> per_task;  // heldout minus train loss
  MeanCi summary;
};

/// Within-task gap: for each task, split into `shots` adaptation examples and
/// the rest, adapt, and report L(adapted; held-out) - L(adapted; adaptation).
/// With heldout_is_train the adaptation examples are scored on both sides.
GapReport generalization_gap(const Learner& learner, const ParameterSet& theta, std::span<const Task> tasks,
                             const GapRegime& regime, std::uint64_t seed, bool heldout_is_train = false);

struct TaskLevelGap {
  double train_tasks_loss = 0.0;
  double heldout_tasks_loss = 0.0;
  double gap = 0.0;  // heldout_tasks_loss - train_tasks_loss
};

/// Mean post-adaptation held-out loss on unseen tasks minus the same on training tasks.
TaskLevelGap task_level_gap(const Learner& learner, const ParameterSet& theta,
                            std::span<const Task> train_tasks, std::span<const Task> heldout_tasks,
                            const GapRegime& regime, std::uint64_t seed);

struct KShotOptions {
  std::size_t test_size = 20;
  std::size_t uho_threshold = 10;  // k below this uses the init's few-shot omega
  double large_k_lr = 0.005;
  std::size_t large_k_max_steps = 100;
  std::size_t large_k_patience = 20;
  double val_fraction = 0.2;
  std::size_t threads = 1;
};

struct KShotRow {
  std::string init_tag;
  std::size_t k = 0;
  std::string task_id;
  std::size_t repeat = 0;
  double iou = 0.0;
};

struct KShotSummary {
  std::string init_tag;
  std::size_t k = 0;
  MeanCi stats;
};

struct KShotCurve {
  std::vector<std::size_t> k_values;
  std::vector<KShotRow> rows;
  std::vector<KShotSummary> summary;  // |inits| x |k_values|, init-major
};

/// Every (init, k, task, repeat) draws a disjoint test set of test_size and a
/// k-example training set. Small k adapts with the init's few-shot omega; large
/// k early-stops on a val_fraction carve-out of the training set, then
/// retrains on the full set for the best step count at large_k_lr.
KShotCurve kshot_curve(const Learner& learner, std::span<const TaggedInit> inits, std::span<const Task> tasks,
                       std::span<const std::size_t> k_values, std::size_t repeats, const UpdateHyperparams& base,
                       const KShotOptions& options, std::uint64_t seed);

}  // namespace microlab
