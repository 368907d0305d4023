// Copyright 2026 The monetseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>
#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace monetseg {

/// Dense row-major tensor of up to five axes. Volumetric tensors use the
/// shape (batch, channel, z, y, x) so x is the fastest axis, the same
/// layout as Volume. Storage is aligned to Eigen's packet size so vectorised
/// reductions split the same way on every run.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {}
  Tensor(std::initializer_list<std::size_t> shape, T fill = T(0))
      : Tensor(std::vector<std::size_t>(shape), fill) {}

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(std::vector<std::size_t> shape);

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T, Eigen::aligned_allocator<T>> data_;
};

template <class T>
void Tensor<T>::reshape(std::vector<std::size_t> shape) {
  if (count(shape) != data_.size()) throw std::invalid_argument("reshape: size mismatch");
  shape_ = std::move(shape);
}

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<MatRM<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const MatRM<T>>;

/// View a tensor as a (dim0 x rest) row-major matrix.
template <class T>
MatMap<T> as_matrix(Tensor<T>& t) {
  const auto rows = static_cast<Eigen::Index>(t.rank() ? t.dim(0) : 1);
  return MatMap<T>(t.data(), rows, rows ? static_cast<Eigen::Index>(t.size()) / rows : 0);
}
template <class T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
  const auto rows = static_cast<Eigen::Index>(t.rank() ? t.dim(0) : 1);
  return ConstMatMap<T>(t.data(), rows,
                        rows ? static_cast<Eigen::Index>(t.size()) / rows : 0);
}

/// Throws if any element is NaN or infinite.
template <class T>
void check_finite(const Tensor<T>& t, const char* where);

}  // namespace monetseg
