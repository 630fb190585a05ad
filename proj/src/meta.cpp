// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "microlab/meta.hpp"

#include <cmath>

#include "microlab/error.hpp"
#include "microlab/parallel.hpp"

namespace microlab {

namespace {

bool is_fraction(double x) { return x >= 0.0 && x <= 1.0; }

GradMap param_difference(const ParameterSet& a, const ParameterSet& b) {
  GradMap d;
  const auto pa = a.params(), pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i) d.emplace(pa[i].name, pa[i].value - pb[i].value);
  return d;
}

GradMap stat_difference(const ParameterSet& a, const ParameterSet& b) {
  GradMap d;
  const auto sa = a.stats(), sb = b.stats();
  for (std::size_t i = 0; i < sa.size(); ++i) d.emplace(sa[i].name, sa[i].value - sb[i].value);
  return d;
}

void accumulate(GradMap& sum, const GradMap& term) {
  for (const auto& [name, t] : term) {
    auto it = sum.find(name);
    if (it == sum.end())
      sum.emplace(name, t);
    else
      it->second += t;
  }
}

std::vector<Example> pick(const Task& task, std::span<const std::size_t> ids) {
  std::vector<Example> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(task.examples[i]);
  return out;
}

}  // namespace

// --- hyperparameters --------------------------------------------------------

void UpdateHyperparams::validate() const {
  require(std::isfinite(lr) && lr > 0.0, "UpdateHyperparams: lr must be positive");
  require(inner_batch >= 1, "UpdateHyperparams: inner_batch must be at least 1");
  require(is_fraction(dropout_rate) && dropout_rate < 1.0,
          "UpdateHyperparams: dropout_rate must lie in [0, 1)");
  require(is_fraction(aug_rate), "UpdateHyperparams: aug_rate must lie in [0, 1]");
  require(std::isfinite(l2_lambda) && l2_lambda >= 0.0,
          "UpdateHyperparams: l2_lambda must be nonnegative");
}

std::string to_string(OmegaTag tag) { return tag == OmegaTag::train ? "train" : "test"; }

OmegaTag omega_tag_from_string(const std::string& s) {
  if (s == "train") return OmegaTag::train;
  if (s == "test") return OmegaTag::test;
  throw ContractError("unknown omega mode tag '" + s + "' (expected train or test)");
}

std::string to_string(MetaAlgorithm algo) {
  switch (algo) {
    case MetaAlgorithm::reptile: return "reptile";
    case MetaAlgorithm::fomaml_disjoint: return "fomaml_disjoint";
    case MetaAlgorithm::fomaml_star: return "fomaml_star";
  }
  return "?";
}

MetaAlgorithm meta_algorithm_from_string(const std::string& s) {
  if (s == "reptile") return MetaAlgorithm::reptile;
  if (s == "fomaml_disjoint") return MetaAlgorithm::fomaml_disjoint;
  if (s == "fomaml_star") return MetaAlgorithm::fomaml_star;
  throw ContractError("unknown algorithm '" + s + "' (expected reptile, fomaml_disjoint or fomaml_star)");
}

void MetaConfig::validate() const {
  require(meta_batch >= 1, "MetaConfig: meta_batch must be at least 1");
  require(train_shots >= 1, "MetaConfig: train_shots must be at least 1");
  require(meta_lr_initial >= 0.0 && meta_lr_final >= 0.0, "MetaConfig: meta learning rates must be nonnegative");
  require(threads >= 1, "MetaConfig: threads must be at least 1");
  inner.validate();
}

double MetaConfig::meta_lr(std::size_t step) const {
  if (meta_steps <= 1) return meta_lr_initial;
  const double frac = static_cast<double>(step) / static_cast<double>(meta_steps - 1);
  return meta_lr_initial + (meta_lr_final - meta_lr_initial) * frac;
}

void JointConfig::validate() const {
  require(batch >= 1, "JointConfig: batch must be at least 1");
  require(lr > 0.0, "JointConfig: lr must be positive");
  require(l2_lambda >= 0.0, "JointConfig: l2_lambda must be nonnegative");
  require(is_fraction(dropout_rate) && dropout_rate < 1.0, "JointConfig: dropout_rate must lie in [0, 1)");
  require(is_fraction(aug_rate), "JointConfig: aug_rate must lie in [0, 1]");
}

// --- segmentation learner ----------------------------------------------------

Tensor stack_images(std::span<const Example> examples) {
  std::vector<const Tensor*> items;
  items.reserve(examples.size());
  for (const auto& ex : examples) items.push_back(&ex.image);
  return stack_batch(items);
}

Tensor stack_masks(std::span<const Example> examples) {
  std::vector<const Tensor*> items;
  items.reserve(examples.size());
  for (const auto& ex : examples) items.push_back(&ex.mask);
  return stack_batch(items);
}

double SegmentationLearner::loss_and_grad(ParameterSet& params, std::span<const Example> batch,
                                          const UpdateHyperparams& omega, Rng& rng,
                                          GradMap& grads) const {
  const Tensor images = stack_images(batch);
  const Tensor masks = stack_masks(batch);
  ForwardCache cache;
  const Tensor probs = net_.forward(params, images, Mode::train, rng, &cache, omega.dropout_rate);
  const CompositeLoss loss = composite_loss(masks, foreground_channel(probs), nullptr, 0.0);
  grads = net_.backward(params, cache, lift_foreground_grad(loss.grad_yhat, probs.dim(1)));
  return loss.value.total;
}

double SegmentationLearner::evaluate_iou(const ParameterSet& params,
                                         std::span<const Example> examples) const {
  require(!examples.empty(), "evaluate_iou: no examples");
  const Tensor pred = predict_mask(net_.predict_probs(params, stack_images(examples)));
  return soft_iou(stack_masks(examples), pred);
}

double SegmentationLearner::eval_loss(const ParameterSet& params, std::span<const Example> examples,
                                      double l2_lambda) const {
  require(!examples.empty(), "eval_loss: no examples");
  const Tensor probs = net_.predict_probs(params, stack_images(examples));
  return composite_loss_value(stack_masks(examples), foreground_channel(probs), &params, l2_lambda).total;
}

// --- update operator ---------------------------------------------------------

std::vector<Example> sample_batch(std::span<const Example> data, const UpdateHyperparams& omega,
                                  Rng& rng) {
  require(!data.empty(), "inner_update: no training examples");
  const std::size_t b = std::min(omega.inner_batch, data.size());
  std::vector<Example> batch;
  batch.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    const Example& ex = data[uniform_index(rng, data.size())];
    batch.push_back(omega.aug_rate > 0.0 ? augment(ex, omega.aug_rate, rng) : ex);
  }
  return batch;
}

double inner_step(const Learner& learner, ParameterSet& params, std::span<const Example> data,
                  const UpdateHyperparams& omega, Rng& rng) {
  const std::vector<Example> batch = sample_batch(data, omega, rng);
  GradMap grads;
  const double loss = learner.loss_and_grad(params, batch, omega, rng, grads);
  const double total = loss + omega.l2_lambda * params.squared_norm();
  sgd_step_inplace(params, grads, omega.lr, omega.l2_lambda);
  return total;
}

void inner_update_inplace(const Learner& learner, ParameterSet& theta, std::span<const Example> data,
                          const UpdateHyperparams& omega, Rng& rng) {
  require(!data.empty(), "inner_update: no training examples");
  omega.validate();
  for (std::size_t s = 0; s < omega.steps; ++s) inner_step(learner, theta, data, omega, rng);
}

ParameterSet inner_update(const Learner& learner, const ParameterSet& theta,
                          std::span<const Example> data, const UpdateHyperparams& omega, Rng& rng) {
  ParameterSet out = theta;
  inner_update_inplace(learner, out, data, omega, rng);
  return out;
}

// --- meta-gradients ----------------------------------------------------------

MetaGradient reptile_meta_grad(const Learner& learner, const ParameterSet& theta, const Task& task,
                               std::size_t train_shots, const UpdateHyperparams& omega, Rng& rng) {
  require(task.examples.size() >= train_shots,
          "reptile_meta_grad: task " + task.id + " has fewer than " + std::to_string(train_shots) + " examples");
  const auto ids = sample_without_replacement(task.examples.size(), train_shots, rng);
  const std::vector<Example> both = pick(task, ids);
  const ParameterSet adapted = inner_update(learner, theta, both, omega, rng);
  MetaGradient g;
  g.delta = param_difference(adapted, theta);
  g.stat_delta = stat_difference(adapted, theta);
  g.train_loss = learner.eval_loss(adapted, both, omega.l2_lambda);
  return g;
}

MetaGradient fomaml_meta_grad(const Learner& learner, const ParameterSet& theta, const Task& task,
                              std::size_t shots, const UpdateHyperparams& omega, SamplingMode mode,
                              Rng& rng) {
  const Episode ep = sample_episode(task, shots, shots, mode, rng);
  const ParameterSet theta_tr = inner_update(learner, theta, ep.train, omega, rng);
  UpdateHyperparams omega_val = omega;
  omega_val.steps = 1;
  const ParameterSet theta_val = inner_update(learner, theta_tr, ep.val, omega_val, rng);
  MetaGradient g;
  g.delta = param_difference(theta_val, theta_tr);
  g.stat_delta = stat_difference(theta_val, theta);
  g.train_loss = learner.eval_loss(theta_tr, ep.train, omega.l2_lambda);
  return g;
}

// --- outer loop --------------------------------------------------------------

ParameterSet meta_train(const Learner& learner, ParameterSet theta, std::span<const Task> tasks,
                        const MetaConfig& config, Rng& rng, const MetaCallbacks& callbacks) {
  require(!tasks.empty(), "meta_train: no training tasks");
  config.validate();
  std::vector<MetaGradient> grads(config.meta_batch);
  std::vector<std::size_t> slots(config.meta_batch);
  for (std::size_t step = 0; step < config.meta_steps; ++step) {
    const double lr = config.meta_lr(step);
    for (auto& s : slots) s = uniform_index(rng, tasks.size());
    const std::uint64_t step_seed = rng();

    parallel_for(config.meta_batch, config.threads, [&](std::size_t i) {
      Rng task_rng(derive_seed(step_seed, i));
      const Task& task = tasks[slots[i]];
      switch (config.algorithm) {
        case MetaAlgorithm::reptile:
          grads[i] = reptile_meta_grad(learner, theta, task, config.train_shots, config.inner, task_rng);
          break;
        case MetaAlgorithm::fomaml_disjoint:
          grads[i] = fomaml_meta_grad(learner, theta, task, config.train_shots, config.inner,
                                      SamplingMode::disjoint, task_rng);
          break;
        case MetaAlgorithm::fomaml_star:
          grads[i] = fomaml_meta_grad(learner, theta, task, config.train_shots, config.inner,
                                      SamplingMode::with_replacement_union, task_rng);
          break;
      }
    });

    GradMap delta, stat_delta;
    double loss = 0.0;
    for (const auto& g : grads) {
      accumulate(delta, g.delta);
      accumulate(stat_delta, g.stat_delta);
      loss += g.train_loss;
    }
    const double scale = lr / static_cast<double>(config.meta_batch);
    for (auto& e : theta.params()) e.value.axpy(scale, delta.at(e.name));
    for (auto& e : theta.stats()) e.value.axpy(scale, stat_delta.at(e.name));

    if (callbacks.on_step) callbacks.on_step(step, lr, loss / static_cast<double>(config.meta_batch));
    if (callbacks.on_checkpoint && callbacks.checkpoint_every > 0 && (step + 1) % callbacks.checkpoint_every == 0)
      callbacks.on_checkpoint(step + 1, theta);
  }
  return theta;
}

// --- joint training ------------------------------------------------------------

JointTrainResult joint_train(const ModelConfig& binary_cfg, std::span<const Task> tasks,
                             const JointConfig& config, Rng& rng,
                             const std::function<void(std::size_t, double)>& on_epoch) {
  require(!tasks.empty(), "joint_train: no tasks");
  config.validate();
  ModelConfig cfg = binary_cfg;
  cfg.num_output_channels = tasks.size() + 1;
  const SegmentationNet net(cfg);
  ParameterSet params = net.build(rng);

  struct Ref {
    std::size_t task, example;
  };
  std::vector<Ref> pool;
  for (std::size_t t = 0; t < tasks.size(); ++t)
    for (std::size_t e = 0; e < tasks[t].examples.size(); ++e) pool.push_back({t, e});
  require(!pool.empty(), "joint_train: tasks contain no examples");

  const std::size_t batches_per_epoch = (pool.size() + config.batch - 1) / config.batch;
  const double total_steps = static_cast<double>(config.epochs * batches_per_epoch);
  JointTrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = sample_without_replacement(pool.size(), pool.size(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b, ++step) {
      const std::size_t lo = b * config.batch, hi = std::min(pool.size(), lo + config.batch);
      std::vector<Example> batch;
      std::vector<Tensor> labels;
      for (std::size_t i = lo; i < hi; ++i) {
        const Ref r = pool[order[i]];
        batch.push_back(augment(tasks[r.task].examples[r.example], config.aug_rate, rng));
        Tensor lab = batch.back().mask;
        lab *= static_cast<double>(r.task + 1);
        labels.push_back(std::move(lab));
      }
      std::vector<const Tensor*> label_ptrs;
      for (const auto& l : labels) label_ptrs.push_back(&l);
      ForwardCache cache;
      const Tensor probs = net.forward(params, stack_images(batch), Mode::train, rng, &cache, config.dropout_rate);
      Tensor grad;
      const double ce = categorical_cross_entropy(stack_batch(label_ptrs), probs, &grad);
      epoch_loss += ce + config.l2_lambda * params.squared_norm();
      const GradMap grads = net.backward(params, cache, grad);
      const double lr = config.lr * (1.0 - static_cast<double>(step) / total_steps);
      sgd_step_inplace(params, grads, lr, config.l2_lambda);
    }
    epoch_loss /= static_cast<double>(batches_per_epoch);
    result.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }

  net.reinit_head(params, binary_cfg.num_output_channels, rng);
  result.params = std::move(params);
  result.trained_head_channels = cfg.num_output_channels;
  for (const auto& t : tasks) result.class_names.push_back(t.id);
  return result;
}

// --- evaluation ----------------------------------------------------------------

AdaptResult adapt_and_eval(const Learner& learner, const ParameterSet& theta,
                           std::span<const Example> train, std::span<const Example> eval,
                           const UpdateHyperparams& omega, Rng& rng) {
  require(!eval.empty(), "adapt_and_eval: no evaluation examples");
  const ParameterSet adapted = inner_update(learner, theta, train, omega, rng);
  return {learner.evaluate_iou(adapted, eval), omega.steps};
}

std::pair<std::vector<Example>, std::vector<Example>> random_split(const Task& task, std::size_t k,
                                                                   Rng& rng) {
  const std::size_t n = task.examples.size();
  require(k >= 1 && k < n, "random_split: task " + task.id + " has " + std::to_string(n) +
                               " examples, cannot hold out any with k = " + std::to_string(k));
  const auto order = sample_without_replacement(n, n, rng);
  std::pair<std::vector<Example>, std::vector<Example>> out;
  for (std::size_t i = 0; i < n; ++i)
    (i < k ? out.first : out.second).push_back(task.examples[order[i]]);
  return out;
}

}  // namespace microlab
