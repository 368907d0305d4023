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

#include <string>
#include <vector>

#include "monetseg/rng.hpp"
#include "monetseg/tensor.hpp"

namespace monetseg {

enum class Padding { kValid, kSameZero };

/// Cubic 3-D convolution (cross-correlation, no kernel flip).
/// weight: [out, in, k, k, k]; bias: [out].
template <class T>
struct ConvLayer {
  int kernel = 1;
  int in_channels = 1;
  int out_channels = 1;
  Padding padding = Padding::kValid;
  Tensor<T> weight;
  Tensor<T> bias;

  ConvLayer() = default;
  ConvLayer(int k, int in, int out, Padding pad = Padding::kValid);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
  void init(Rng& rng);
  std::size_t fan_in() const {
    return static_cast<std::size_t>(in_channels) * kernel * kernel * kernel;
  }
};

template <class T>
struct ConvGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_w;
  Tensor<T> grad_b;
};

/// x: [n, in, z, y, x]. Valid output extent is in - k + 1 per axis; same-zero
/// keeps the extent (odd k only) with (k - 1) / 2 zero padding.
template <class T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const ConvLayer<T>& layer);
template <class T>
ConvGrads<T> conv3d_backward(const Tensor<T>& x, const ConvLayer<T>& layer,
                             const Tensor<T>& grad_out);

/// im2col for one output z-plane of one sample: row r = (oy * ox_extent + ox),
/// column order (channel, kz, ky, kx), matching the weight layout.
template <class T>
void im2col_plane(const T* sample, int channels, int nz, int ny, int nx, int kernel,
                  int pad, int oz, int out_ny, int out_nx, MatRM<T>& cols);

/// Per-feature batch normalization over the rows of an [n, C] tensor.
template <class T>
struct BatchNormLayer {
  int channels = 0;
  T momentum = T(0.1);
  T epsilon = T(1e-5);
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

  BatchNormLayer() = default;
  explicit BatchNormLayer(int c);
};

template <class T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

template <class T>
struct BatchNormGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_gamma;
  Tensor<T> grad_beta;
};

/// Train mode: batch statistics, updates running stats. Eval mode: running
/// stats, no update, cache left empty.
template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormLayer<T>& bn, bool train,
                            BatchNormCache<T>* cache);
template <class T>
BatchNormGrads<T> batchnorm_backward(const BatchNormLayer<T>& bn,
                                     const BatchNormCache<T>& cache,
                                     const Tensor<T>& grad_out);
/// In-place eval-mode affine on a row-major [rows, C] block.
template <class T>
void batchnorm_apply_eval(const BatchNormLayer<T>& bn, MatRM<T>& x);

/// weight: [out, in]; bias: [out].
template <class T>
struct DenseLayer {
  int in_features = 0;
  int out_features = 0;
  Tensor<T> weight;
  Tensor<T> bias;

  DenseLayer() = default;
  DenseLayer(int in, int out);
  void init(Rng& rng);
};

template <class T>
struct DenseGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_w;
  Tensor<T> grad_b;
};

template <class T>
Tensor<T> dense_forward(const Tensor<T>& x, const DenseLayer<T>& layer);
template <class T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const DenseLayer<T>& layer,
                             const Tensor<T>& grad_out);

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x);
template <class T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

/// Inverted dropout: kept activations are scaled by 1 / (1 - p). Returns the
/// applied multiplier per element (0 or 1/(1-p)). p must lie in [0, 1).
template <class T>
Tensor<T> dropout_mask(const std::vector<std::size_t>& shape, double p, Rng& rng);

/// Row-wise log-softmax of an [n, C] tensor.
template <class T>
Tensor<T> log_softmax(const Tensor<T>& logits);

/// Learning-rate schedule evaluated per epoch.
struct LrSchedule {
  enum class Kind { kConstant, kCosine, kStep };
  Kind kind = Kind::kConstant;
  double lr0 = 1e-2;
  int epochs = 1;                 // cosine period
  std::vector<int> drop_epochs;   // step schedule
  double drop_factor = 0.1;

  static LrSchedule cosine(double lr0, int epochs);
  static LrSchedule step(double lr0, std::vector<int> drops, double factor = 0.1);
  double lr(int epoch) const;
};

/// Plain SGD: p <- p - lr * g.
template <class T>
void sgd_step(std::span<T> params, std::span<const T> grads, double lr);

}  // namespace monetseg
