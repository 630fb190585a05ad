// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

// Inner-loop update operator, first-order meta-gradients (Reptile, FOMAML,
// FOMAML*), the outer meta-training loop and the joint-training baseline.

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "microlab/losses.hpp"
#include "microlab/model.hpp"
#include "microlab/params.hpp"
#include "microlab/tasks.hpp"

namespace microlab {

enum class OmegaTag { train, test };

/// Hyperparameters of the update routine U (the omega of one adaptation call).
struct UpdateHyperparams {
  double lr = 0.005;
  std::size_t steps = 5;
  std::size_t inner_batch = 8;
  double dropout_rate = 0.2;
  double aug_rate = 0.5;
  double l2_lambda = kDefaultL2;
  OmegaTag mode_tag = OmegaTag::train;

  void validate() const;
  bool operator==(const UpdateHyperparams&) const = default;
};

std::string to_string(OmegaTag tag);
OmegaTag omega_tag_from_string(const std::string& s);

/// Loss/gradient provider the update operator is written against. The
/// segmentation network is the production implementation; tests plug in
/// closed-form toys.
class Learner {
 public:
  virtual ~Learner() = default;

  /// Data loss on `batch` in training mode and its gradient for every
  /// differentiable parameter. The L2 term is not included; the SGD step adds
  /// it. May update running statistics held in `params`.
  virtual double loss_and_grad(ParameterSet& params, std::span<const Example> batch,
                               const UpdateHyperparams& omega, Rng& rng, GradMap& grads) const = 0;

  /// Mean hard-prediction IoU over `examples`, inference mode.
  virtual double evaluate_iou(const ParameterSet& params, std::span<const Example> examples) const = 0;

  /// Full training objective (data loss + l2_lambda * ||theta||^2), inference mode.
  virtual double eval_loss(const ParameterSet& params, std::span<const Example> examples,
                           double l2_lambda) const = 0;
};

/// Binary segmentation with the composite loss on the foreground channel.
class SegmentationLearner final : public Learner {
 public:
  explicit SegmentationLearner(SegmentationNet net) : net_(std::move(net)) {}

  const SegmentationNet& net() const { return net_; }

  double loss_and_grad(ParameterSet& params, std::span<const Example> batch,
                       const UpdateHyperparams& omega, Rng& rng, GradMap& grads) const override;
  double evaluate_iou(const ParameterSet& params, std::span<const Example> examples) const override;
  double eval_loss(const ParameterSet& params, std::span<const Example> examples,
                   double l2_lambda) const override;

 private:
  SegmentationNet net_;
};

/// Images and masks of `examples` stacked as (N, 1, H, W).
Tensor stack_images(std::span<const Example> examples);
Tensor stack_masks(std::span<const Example> examples);

/// min(inner_batch, |data|) examples drawn with replacement, each augmented at aug_rate.
std::vector<Example> sample_batch(std::span<const Example> data, const UpdateHyperparams& omega,
                                  Rng& rng);

/// One SGD step: sample_batch, loss_and_grad, then sgd_step with weight decay l2_lambda.
/// Returns the batch loss including the L2 term.
double inner_step(const Learner& learner, ParameterSet& params, std::span<const Example> data,
                  const UpdateHyperparams& omega, Rng& rng);

/// U(theta; data, omega): omega.steps inner steps starting from theta.
ParameterSet inner_update(const Learner& learner, const ParameterSet& theta,
                          std::span<const Example> data, const UpdateHyperparams& omega, Rng& rng);
void inner_update_inplace(const Learner& learner, ParameterSet& theta, std::span<const Example> data,
                          const UpdateHyperparams& omega, Rng& rng);

/// Per-parameter meta-gradient direction plus the matching running-statistic shift.
struct MetaGradient {
  GradMap delta;
  GradMap stat_delta;
  double train_loss = 0.0;  // post-update loss on the un-augmented fitting examples
};

enum class MetaAlgorithm { reptile, fomaml_disjoint, fomaml_star };

std::string to_string(MetaAlgorithm algo);
MetaAlgorithm meta_algorithm_from_string(const std::string& s);

/// theta_both - theta, with theta_both adapted on train_shots distinct examples.
MetaGradient reptile_meta_grad(const Learner& learner, const ParameterSet& theta, const Task& task,
                               std::size_t train_shots, const UpdateHyperparams& omega, Rng& rng);

/// theta_val - theta_tr, where theta_val takes one step on D^val from theta_tr.
MetaGradient fomaml_meta_grad(const Learner& learner, const ParameterSet& theta, const Task& task,
                              std::size_t shots, const UpdateHyperparams& omega, SamplingMode mode,
                              Rng& rng);

struct MetaConfig {
  MetaAlgorithm algorithm = MetaAlgorithm::fomaml_star;
  std::size_t meta_batch = 5;
  std::size_t meta_steps = 2000;
  double meta_lr_initial = 0.1;
  double meta_lr_final = 1e-5;
  std::size_t train_shots = 5;
  UpdateHyperparams inner;
  std::size_t threads = 1;

  void validate() const;
  /// Linear schedule: step 0 gives meta_lr_initial, step meta_steps - 1 gives meta_lr_final.
  double meta_lr(std::size_t step) const;
};

struct MetaCallbacks {
  std::function<void(std::size_t step, double meta_lr, double loss)> on_step;
  std::function<void(std::size_t step, const ParameterSet& theta)> on_checkpoint;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
};

/// Outer loop: sample meta_batch tasks with replacement, average their
/// meta-gradients in task-slot order, theta += meta_lr(t) * mean delta.
/// Running statistics move by the same rule toward their adapted values.
ParameterSet meta_train(const Learner& learner, ParameterSet theta, std::span<const Task> tasks,
                        const MetaConfig& config, Rng& rng, const MetaCallbacks& callbacks = {});

struct JointConfig {
  std::size_t epochs = 200;
  std::size_t batch = 8;
  double lr = 0.005;  // decays linearly to 0 over all steps
  double l2_lambda = kDefaultL2;
  double dropout_rate = 0.2;
  double aug_rate = 0.5;

  void validate() const;
};

struct JointTrainResult {
  ParameterSet params;  // binary head, freshly initialized
  std::size_t trained_head_channels = 0;  // N + 1
  std::vector<std::string> class_names;   // index c - 1 names class c; 0 is background
  std::vector<double> epoch_loss;         // mean batch cross entropy + L2 per epoch
};

/// Plain multi-class SGD over every example of every task, then the
/// (N + 1)-way head is replaced by a 2-way one for binary adaptation.
JointTrainResult joint_train(const ModelConfig& binary_cfg, std::span<const Task> tasks,
                             const JointConfig& config, Rng& rng,
                             const std::function<void(std::size_t epoch, double loss)>& on_epoch = {});

struct AdaptResult {
  double iou = 0.0;
  std::size_t steps = 0;
};

/// Adapt a copy of theta on `train`, score `eval` in inference mode. theta is untouched.
AdaptResult adapt_and_eval(const Learner& learner, const ParameterSet& theta,
                           std::span<const Example> train, std::span<const Example> eval,
                           const UpdateHyperparams& omega, Rng& rng);

/// Random k-shot split of a task's pool: (k training examples, the rest).
std::pair<std::vector<Example>, std::vector<Example>> random_split(const Task& task, std::size_t k,
                                                                   Rng& rng);

}  // namespace microlab
