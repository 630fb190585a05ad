// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "microlab/params.hpp"

#include <algorithm>

#include "microlab/error.hpp"

namespace microlab {

void ParameterSet::add_param(std::string block, std::string name, Tensor value) {
  require(!has_param(name), "ParameterSet: duplicate parameter " + name);
  params_.push_back({std::move(block), std::move(name), std::move(value)});
}

void ParameterSet::add_stat(std::string block, std::string name, Tensor value) {
  for (const auto& e : stats_) require(e.name != name, "ParameterSet: duplicate statistic " + name);
  stats_.push_back({std::move(block), std::move(name), std::move(value)});
}

std::size_t ParameterSet::param_index(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw ContractError("ParameterSet: no parameter named " + name);
}

std::size_t ParameterSet::stat_index(const std::string& name) const {
  for (std::size_t i = 0; i < stats_.size(); ++i)
    if (stats_[i].name == name) return i;
  throw ContractError("ParameterSet: no running statistic named " + name);
}

Tensor& ParameterSet::param(const std::string& name) { return params_[param_index(name)].value; }
const Tensor& ParameterSet::param(const std::string& name) const {
  return params_[param_index(name)].value;
}
Tensor& ParameterSet::stat(const std::string& name) { return stats_[stat_index(name)].value; }
const Tensor& ParameterSet::stat(const std::string& name) const {
  return stats_[stat_index(name)].value;
}

bool ParameterSet::has_param(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const ParamEntry& e) { return e.name == name; });
}

std::vector<std::string> ParameterSet::block_names() const {
  std::vector<std::string> names;
  for (const auto& e : params_)
    if (std::find(names.begin(), names.end(), e.block) == names.end()) names.push_back(e.block);
  return names;
}

std::size_t ParameterSet::num_params() const {
  std::size_t n = 0;
  for (const auto& e : params_) n += e.value.size();
  return n;
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(num_params());
  for (const auto& e : params_) flat.insert(flat.end(), e.value.data().begin(), e.value.data().end());
  return flat;
}

void ParameterSet::unflatten(std::span<const double> flat) {
  require(flat.size() == num_params(), "ParameterSet::unflatten: expected " +
                                           std::to_string(num_params()) + " values, got " +
                                           std::to_string(flat.size()));
  std::size_t off = 0;
  for (auto& e : params_) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + e.value.size()), e.value.raw());
    off += e.value.size();
  }
}

std::vector<double> ParameterSet::flatten_block(const std::string& block) const {
  std::vector<double> flat;
  for (const auto& e : params_)
    if (e.block == block) flat.insert(flat.end(), e.value.data().begin(), e.value.data().end());
  return flat;
}

bool ParameterSet::same_structure(const ParameterSet& other) const {
  auto same = [](const std::vector<ParamEntry>& a, const std::vector<ParamEntry>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].name != b[i].name || a[i].block != b[i].block ||
          a[i].value.shape() != b[i].value.shape())
        return false;
    return true;
  };
  return same(params_, other.params_) && same(stats_, other.stats_);
}

bool ParameterSet::identical(const ParameterSet& other) const {
  if (!same_structure(other)) return false;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (!params_[i].value.identical(other.params_[i].value)) return false;
  for (std::size_t i = 0; i < stats_.size(); ++i)
    if (!stats_[i].value.identical(other.stats_[i].value)) return false;
  return true;
}

double ParameterSet::squared_norm() const {
  double s = 0.0;
  for (const auto& e : params_) s += e.value.squared_norm();
  return s;
}

void ParameterSet::remove_block(const std::string& block) {
  std::erase_if(params_, [&](const ParamEntry& e) { return e.block == block; });
  std::erase_if(stats_, [&](const ParamEntry& e) { return e.block == block; });
}

void sgd_step_inplace(ParameterSet& params, const GradMap& grads, double lr, double weight_decay) {
  require(lr >= 0.0, "sgd_step: learning rate must be nonnegative");
  require(weight_decay >= 0.0, "sgd_step: weight decay must be nonnegative");
  for (auto& e : params.params()) {
    auto it = grads.find(e.name);
    if (it == grads.end()) throw ContractError("sgd_step: missing gradient for " + e.name);
    require(it->second.shape() == e.value.shape(), "sgd_step: gradient shape mismatch for " + e.name);
    double* theta = e.value.raw();
    const double* g = it->second.raw();
    for (std::size_t i = 0; i < e.value.size(); ++i)
      theta[i] -= lr * (g[i] + 2.0 * weight_decay * theta[i]);
  }
}

ParameterSet sgd_step(const ParameterSet& params, const GradMap& grads, double lr,
                      double weight_decay) {
  ParameterSet out = params;
  sgd_step_inplace(out, grads, lr, weight_decay);
  return out;
}

}  // namespace microlab
