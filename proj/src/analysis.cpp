// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "microlab/analysis.hpp"

#include <cmath>

#include "microlab/error.hpp"
#include "microlab/parallel.hpp"

namespace microlab {

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double mean_loss(const Learner& learner, const ParameterSet& theta, std::span<const Task> tasks,
                 const GapRegime& regime, std::uint64_t seed) {
  require(!tasks.empty(), "task_level_gap: empty task set");
  double s = 0.0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    Rng rng(derive_seed(seed, t));
    auto [train, heldout] = random_split(tasks[t], regime.shots, rng);
    const ParameterSet adapted = inner_update(learner, theta, train, regime.omega, rng);
    s += learner.eval_loss(adapted, heldout, regime.omega.l2_lambda);
  }
  return s / static_cast<double>(tasks.size());
}

}  // namespace

DistanceReport weight_distances(const ParameterSet& theta, const ParameterSet& theta_tau) {
  require(theta.same_structure(theta_tau), "weight_distances: parameter structures differ");
  DistanceReport r;
  const auto a = theta.flatten(), b = theta_tau.flatten();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  r.d1 = std::sqrt(s);

  for (const auto& block : theta.block_names()) {
    const auto v = theta.flatten_block(block), u = theta_tau.flatten_block(block);
    BlockDistance bd;
    bd.block = block;
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) abs_sum += std::abs(v[i] - u[i]);
    bd.d3 = v.empty() ? 0.0 : abs_sum / static_cast<double>(v.size());
    const double nv = norm(v), nu = norm(u);
    if (nv > 0.0 && nu > 0.0) {
      double d = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double t = v[i] / nv - u[i] / nu;
        d += t * t;
      }
      bd.d2 = std::sqrt(d);
    }
    r.per_block.push_back(std::move(bd));
  }
  return r;
}

DistanceStudy distance_study(const Learner& learner, std::span<const TaggedInit> inits,
                             std::span<const Task> tasks, const UpdateHyperparams& omega,
                             std::size_t shots, std::size_t repeats, std::uint64_t seed) {
  require(!inits.empty() && !tasks.empty() && repeats >= 1, "distance_study: need inits, tasks and repeats");
  DistanceStudy study;
  for (const auto& init : inits) {
    std::vector<double> d1s;
    std::vector<std::string> blocks = init.params.block_names();
    std::vector<double> d2_sum(blocks.size(), 0.0), d3_sum(blocks.size(), 0.0);
    std::vector<std::size_t> d2_count(blocks.size(), 0);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      for (std::size_t rep = 0; rep < repeats; ++rep) {
        Rng rng(derive_seed(seed, t, rep));
        auto [train, rest] = random_split(tasks[t], shots, rng);
        const ParameterSet adapted = inner_update(learner, init.params, train, omega, rng);
        const DistanceReport rep_d = weight_distances(init.params, adapted);
        study.rows.push_back({init.tag, tasks[t].id, rep, rep_d.d1});
        d1s.push_back(rep_d.d1);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
          d3_sum[b] += rep_d.per_block[b].d3;
          if (rep_d.per_block[b].d2) {
            d2_sum[b] += *rep_d.per_block[b].d2;
            ++d2_count[b];
          }
        }
      }
    }
    const auto n = static_cast<double>(d1s.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      BlockSummary s;
      s.init_tag = init.tag;
      s.block = blocks[b];
      if (d2_count[b] > 0) s.d2 = d2_sum[b] / static_cast<double>(d2_count[b]);
      s.d3 = d3_sum[b] / n;
      study.blocks.push_back(std::move(s));
    }
    study.d1_summary.emplace_back(init.tag, d1s.size() >= 2 ? mean_iou_ci(d1s) : MeanCi{d1s[0], 0.0, 1});
  }
  return study;
}

GapReport generalization_gap(const Learner& learner, const ParameterSet& theta, std::span<const Task> tasks,
                             const GapRegime& regime, std::uint64_t seed, bool heldout_is_train) {
  require(!tasks.empty(), "generalization_gap: empty task set");
  GapReport r;
  std::vector<double> gaps;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    Rng rng(derive_seed(seed, t));
    auto [train, heldout] = random_split(tasks[t], regime.shots, rng);
    const ParameterSet adapted = inner_update(learner, theta, train, regime.omega, rng);
    const double train_loss = learner.eval_loss(adapted, train, regime.omega.l2_lambda);
    const double held_loss =
        heldout_is_train ? learner.eval_loss(adapted, train, regime.omega.l2_lambda)
                         : learner.eval_loss(adapted, heldout, regime.omega.l2_lambda);
    gaps.push_back(held_loss - train_loss);
    r.per_task.emplace_back(tasks[t].id, gaps.back());
  }
  r.summary = gaps.size() >= 2 ? mean_iou_ci(gaps) : MeanCi{gaps[0], 0.0, 1};
  return r;
}

TaskLevelGap task_level_gap(const Learner& learner, const ParameterSet& theta,
                            std::span<const Task> train_tasks, std::span<const Task> heldout_tasks,
                            const GapRegime& regime, std::uint64_t seed) {
  TaskLevelGap g;
  g.train_tasks_loss = mean_loss(learner, theta, train_tasks, regime, derive_seed(seed, 1));
  g.heldout_tasks_loss = mean_loss(learner, theta, heldout_tasks, regime, derive_seed(seed, 2));
  g.gap = g.heldout_tasks_loss - g.train_tasks_loss;
  return g;
}

KShotCurve kshot_curve(const Learner& learner, std::span<const TaggedInit> inits, std::span<const Task> tasks,
                       std::span<const std::size_t> k_values, std::size_t repeats, const UpdateHyperparams& base,
                       const KShotOptions& options, std::uint64_t seed) {
  require(!inits.empty() && !tasks.empty() && repeats >= 1, "kshot_curve: need inits, tasks and repeats");
  require(!k_values.empty(), "kshot_curve: no k values");
  for (std::size_t i = 0; i < k_values.size(); ++i) {
    require(k_values[i] >= 1, "kshot_curve: k must be positive");
    if (i > 0) require(k_values[i] > k_values[i - 1], "kshot_curve: k values must be strictly increasing");
  }
  const std::size_t need = k_values.back() + options.test_size;
  for (const auto& t : tasks)
    require(t.examples.size() >= need, "kshot_curve: task " + t.id + " has " + std::to_string(t.examples.size()) +
                                           " examples, needs " + std::to_string(need));

  KShotCurve curve;
  curve.k_values.assign(k_values.begin(), k_values.end());
  for (const auto& init : inits) {
    for (std::size_t ki = 0; ki < k_values.size(); ++ki) {
      const std::size_t k = k_values[ki];
      const std::size_t jobs = tasks.size() * repeats;
      std::vector<double> ious(jobs);
      parallel_for(jobs, options.threads, [&](std::size_t j) {
        const std::size_t t = j / repeats, rep = j % repeats;
        // Keyed by (task, repeat, k) only, so every init sees the same samples.
        Rng rng(derive_seed(seed, t * 1000 + rep, k));
        const auto order = sample_without_replacement(tasks[t].examples.size(), need, rng);
        std::vector<Example> test, train;
        for (std::size_t i = 0; i < options.test_size; ++i) test.push_back(tasks[t].examples[order[i]]);
        for (std::size_t i = 0; i < k; ++i) train.push_back(tasks[t].examples[order[options.test_size + i]]);

        if (k < options.uho_threshold) {
          ious[j] = adapt_and_eval(learner, init.params, train, test, init.few_shot_omega, rng).iou;
          return;
        }
        const auto n_val = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(options.val_fraction * static_cast<double>(k))));
        const std::vector<Example> fit(train.begin(), train.end() - static_cast<std::ptrdiff_t>(n_val));
        const std::vector<Example> val(train.end() - static_cast<std::ptrdiff_t>(n_val), train.end());
        UpdateHyperparams omega = base;
        omega.lr = options.large_k_lr;
        const EarlyStopResult es = early_stopping_adapt(learner, init.params, fit, val, omega,
                                                        options.large_k_patience, options.large_k_max_steps, rng);
        omega.steps = es.best_step;
        ious[j] = adapt_and_eval(learner, init.params, train, test, omega, rng).iou;
      });
      for (std::size_t j = 0; j < jobs; ++j)
        curve.rows.push_back({init.tag, k, tasks[j / repeats].id, j % repeats, ious[j]});
      curve.summary.push_back({init.tag, k, jobs >= 2 ? mean_iou_ci(ious) : MeanCi{ious[0], 0.0, 1}});
    }
  }
  return curve;
}

}  // namespace microlab
