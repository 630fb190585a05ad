// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "microlab/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "microlab/error.hpp"
#include "microlab/rng.hpp"

namespace microlab {

double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
  for (auto d : shape_) require(d > 0, "Tensor: extents must be positive, got " + shape_string());
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) require(d > 0, "Tensor: extents must be positive, got " + shape_string());
  require(data_.size() == shape_product(shape_),
          "Tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
              shape_string());
}

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < shape_.size(), "Tensor::dim: axis out of range");
  return shape_[axis];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  require(shape_product(shape) == data_.size(), "Tensor::reshaped: element count mismatch");
  return Tensor(std::move(shape), data_);
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require(shape_ == other.shape_, "Tensor +=: shape mismatch " + shape_string() + " vs " +
                                      other.shape_string());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require(shape_ == other.shape_, "Tensor -=: shape mismatch " + shape_string() + " vs " +
                                      other.shape_string());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

void Tensor::axpy(double s, const Tensor& other) {
  require(shape_ == other.shape_, "Tensor::axpy: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
}

double Tensor::sum() const {
  double s = 0.0;
  for (auto v : data_) s += v;
  return s;
}

double Tensor::squared_norm() const {
  double s = 0.0;
  for (auto v : data_) s += v * v;
  return s;
}

bool Tensor::all_finite() const {
  for (auto v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::identical(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ')';
  return os.str();
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  Tensor r = a;
  r -= b;
  return r;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  Tensor r = a;
  r += b;
  return r;
}

Tensor stack_batch(std::span<const Tensor* const> items) {
  require(!items.empty(), "stack_batch: no items");
  std::vector<std::size_t> item_shape = items[0]->shape();
  if (item_shape.size() == 4) {
    require(item_shape[0] == 1, "stack_batch: 4-D items must have batch extent 1");
    item_shape.erase(item_shape.begin());
  }
  std::vector<std::size_t> shape{items.size()};
  shape.insert(shape.end(), item_shape.begin(), item_shape.end());
  Tensor out(shape);
  const std::size_t stride = shape_product(item_shape);
  for (std::size_t i = 0; i < items.size(); ++i) {
    require(items[i]->size() == stride, "stack_batch: item " + std::to_string(i) +
                                            " has shape " + items[i]->shape_string());
    std::copy(items[i]->data().begin(), items[i]->data().end(), out.raw() + i * stride);
  }
  return out;
}

Tensor batch_item(const Tensor& batched, std::size_t i) {
  require(batched.rank() == 4 && i < batched.dim(0), "batch_item: index out of range");
  const std::size_t stride = batched.size() / batched.dim(0);
  std::vector<double> data(batched.raw() + i * stride, batched.raw() + (i + 1) * stride);
  return Tensor({1, batched.dim(1), batched.dim(2), batched.dim(3)}, std::move(data));
}

}  // namespace microlab
