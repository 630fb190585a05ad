// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "microlab/tensor.hpp"

namespace microlab {

struct ParamEntry {
  std::string block;  // stem, enc1..encK, rsd, head
  std::string name;   // fully qualified, e.g. "enc1.conv.kernel"
  Tensor value;
};

/// Gradients (or any per-parameter deltas) keyed by fully qualified parameter name.
using GradMap = std::map<std::string, Tensor>;

/// Model parameters grouped into named blocks, plus the batch-norm running
/// statistics, which are state rather than gradient-trained parameters.
///
/// Entries keep declaration order. flatten() concatenates the differentiable
/// parameters in that order, each tensor in row-major order; running
/// statistics are never part of the flat vector.
class ParameterSet {
 public:
  void add_param(std::string block, std::string name, Tensor value);
  void add_stat(std::string block, std::string name, Tensor value);

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  Tensor& stat(const std::string& name);
  const Tensor& stat(const std::string& name) const;
  bool has_param(const std::string& name) const;

  std::span<ParamEntry> params() { return params_; }
  std::span<const ParamEntry> params() const { return params_; }
  std::span<ParamEntry> stats() { return stats_; }
  std::span<const ParamEntry> stats() const { return stats_; }

  /// Block names in first-appearance order.
  std::vector<std::string> block_names() const;

  std::size_t num_params() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  std::vector<double> flatten_block(const std::string& block) const;

  /// Same block/name/shape layout (values may differ).
  bool same_structure(const ParameterSet& other) const;
  /// Bitwise equality of every parameter and running statistic.
  bool identical(const ParameterSet& other) const;

  /// Sum of squares over all differentiable parameters.
  double squared_norm() const;

  /// Drop every parameter and statistic of one block (used to swap heads).
  void remove_block(const std::string& block);

 private:
  std::size_t param_index(const std::string& name) const;
  std::size_t stat_index(const std::string& name) const;

  std::vector<ParamEntry> params_;
  std::vector<ParamEntry> stats_;
};

/// theta <- theta - lr * (g + 2 * weight_decay * theta) for every differentiable
/// parameter. Running statistics are copied through unchanged.
ParameterSet sgd_step(const ParameterSet& params, const GradMap& grads, double lr,
                      double weight_decay);
/// In-place variant of sgd_step.
void sgd_step_inplace(ParameterSet& params, const GradMap& grads, double lr, double weight_decay);

}  // namespace microlab
