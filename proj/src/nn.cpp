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

#include "monetseg/nn.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "monetseg/error.hpp"

namespace monetseg {

template <class T>
void check_finite(const Tensor<T>& t, const char* where) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw Error(ErrorKind::kDivergence, std::string("non-finite value in ") + where);
    }
  }
}

// ---------------------------------------------------------------- conv3d

template <class T>
ConvLayer<T>::ConvLayer(int k, int in, int out, Padding pad)
    : kernel(k), in_channels(in), out_channels(out), padding(pad) {
  if (k < 1 || in < 1 || out < 1) throw Error(ErrorKind::kConfig, "invalid conv layer shape");
  if (pad == Padding::kSameZero && k % 2 == 0) {
    throw Error(ErrorKind::kConfig, "same padding requires an odd kernel size");
  }
  const auto uk = static_cast<std::size_t>(k);
  weight = Tensor<T>({static_cast<std::size_t>(out), static_cast<std::size_t>(in), uk, uk, uk});
  bias = Tensor<T>({static_cast<std::size_t>(out)});
}

template <class T>
void ConvLayer<T>::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in()));
  for (auto& w : weight.span()) w = static_cast<T>(rng.uniform(-bound, bound));
  for (auto& b : bias.span()) b = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
void im2col_plane(const T* sample, int channels, int nz, int ny, int nx, int kernel,
                  int pad, int oz, int out_ny, int out_nx, MatRM<T>& cols) {
  const Eigen::Index rows = static_cast<Eigen::Index>(out_ny) * out_nx;
  const Eigen::Index width = static_cast<Eigen::Index>(channels) * kernel * kernel * kernel;
  if (cols.rows() != rows || cols.cols() != width) cols.resize(rows, width);
  const std::size_t plane = static_cast<std::size_t>(ny) * nx;
  const std::size_t volume = plane * nz;
  for (int oy = 0; oy < out_ny; ++oy) {
    for (int ox = 0; ox < out_nx; ++ox) {
      T* row = cols.data() + (static_cast<Eigen::Index>(oy) * out_nx + ox) * width;
      for (int c = 0; c < channels; ++c) {
        const T* src = sample + c * volume;
        for (int kz = 0; kz < kernel; ++kz) {
          const int iz = oz + kz - pad;
          const bool z_in = iz >= 0 && iz < nz;
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy + ky - pad;
            if (!z_in || iy < 0 || iy >= ny) {
              std::fill(row, row + kernel, T(0));
              row += kernel;
              continue;
            }
            const T* line = src + static_cast<std::size_t>(iz) * plane +
                            static_cast<std::size_t>(iy) * nx;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox + kx - pad;
              *row++ = (ix >= 0 && ix < nx) ? line[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

namespace {

struct ConvGeometry {
  int n, nz, ny, nx, pad, oz, oy, ox;
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& x, const ConvLayer<T>& layer) {
  if (x.rank() != 5) throw Error(ErrorKind::kDimsMismatch, "conv3d expects a 5-D tensor");
  if (static_cast<int>(x.dim(1)) != layer.in_channels) {
    throw Error(ErrorKind::kDimsMismatch, "conv3d channel mismatch");
  }
  if (layer.padding == Padding::kSameZero && layer.kernel % 2 == 0) {
    throw Error(ErrorKind::kConfig, "same padding requires an odd kernel size");
  }
  ConvGeometry g{};
  g.n = static_cast<int>(x.dim(0));
  g.nz = static_cast<int>(x.dim(2));
  g.ny = static_cast<int>(x.dim(3));
  g.nx = static_cast<int>(x.dim(4));
  if (layer.padding == Padding::kValid) {
    g.pad = 0;
    g.oz = g.nz - layer.kernel + 1;
    g.oy = g.ny - layer.kernel + 1;
    g.ox = g.nx - layer.kernel + 1;
    if (g.oz < 1 || g.oy < 1 || g.ox < 1) {
      throw Error(ErrorKind::kDimsMismatch, "conv3d valid padding: input smaller than kernel");
    }
  } else {
    g.pad = (layer.kernel - 1) / 2;
    g.oz = g.nz;
    g.oy = g.ny;
    g.ox = g.nx;
  }
  return g;
}

}  // namespace

template <class T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const ConvLayer<T>& layer) {
  const auto g = conv_geometry(x, layer);
  const int out = layer.out_channels;
  Tensor<T> y({static_cast<std::size_t>(g.n), static_cast<std::size_t>(out),
               static_cast<std::size_t>(g.oz), static_cast<std::size_t>(g.oy),
               static_cast<std::size_t>(g.ox)});
  const Eigen::Index width = static_cast<Eigen::Index>(layer.fan_in());
  ConstMatMap<T> w(layer.weight.data(), out, width);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(layer.bias.data(), out);
  const std::size_t in_vol = static_cast<std::size_t>(layer.in_channels) * g.nz * g.ny * g.nx;
  const std::size_t out_plane = static_cast<std::size_t>(g.oy) * g.ox;
  const std::size_t out_vol = out_plane * g.oz;
  MatRM<T> cols;
  MatRM<T> res;
  for (int s = 0; s < g.n; ++s) {
    for (int z = 0; z < g.oz; ++z) {
      im2col_plane(x.data() + s * in_vol, layer.in_channels, g.nz, g.ny, g.nx, layer.kernel,
                   g.pad, z, g.oy, g.ox, cols);
      res.noalias() = cols * w.transpose();
      res.rowwise() += b;
      for (int o = 0; o < out; ++o) {
        T* dst = y.data() + (static_cast<std::size_t>(s) * out + o) * out_vol + z * out_plane;
        for (std::size_t r = 0; r < out_plane; ++r) dst[r] = res(static_cast<Eigen::Index>(r), o);
      }
    }
  }
  return y;
}

template <class T>
ConvGrads<T> conv3d_backward(const Tensor<T>& x, const ConvLayer<T>& layer,
                             const Tensor<T>& grad_out) {
  const auto g = conv_geometry(x, layer);
  const int out = layer.out_channels;
  if (grad_out.rank() != 5 || static_cast<int>(grad_out.dim(0)) != g.n ||
      static_cast<int>(grad_out.dim(1)) != out || static_cast<int>(grad_out.dim(2)) != g.oz ||
      static_cast<int>(grad_out.dim(3)) != g.oy || static_cast<int>(grad_out.dim(4)) != g.ox) {
    throw Error(ErrorKind::kDimsMismatch, "conv3d_backward: grad_out shape mismatch");
  }
  ConvGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>(layer.weight.shape()),
                     Tensor<T>(layer.bias.shape())};
  const Eigen::Index width = static_cast<Eigen::Index>(layer.fan_in());
  ConstMatMap<T> w(layer.weight.data(), out, width);
  MatMap<T> gw(grads.grad_w.data(), out, width);
  const int k = layer.kernel;
  const std::size_t in_plane = static_cast<std::size_t>(g.ny) * g.nx;
  const std::size_t in_vol1 = in_plane * g.nz;
  const std::size_t in_vol = in_vol1 * layer.in_channels;
  const std::size_t out_plane = static_cast<std::size_t>(g.oy) * g.ox;
  const std::size_t out_vol = out_plane * g.oz;
  MatRM<T> cols;
  MatRM<T> dy(static_cast<Eigen::Index>(out_plane), out);
  MatRM<T> dcols;
  for (int s = 0; s < g.n; ++s) {
    T* gx = grads.grad_x.data() + s * in_vol;
    for (int z = 0; z < g.oz; ++z) {
      for (int o = 0; o < out; ++o) {
        const T* src =
            grad_out.data() + (static_cast<std::size_t>(s) * out + o) * out_vol + z * out_plane;
        for (std::size_t r = 0; r < out_plane; ++r) dy(static_cast<Eigen::Index>(r), o) = src[r];
      }
      im2col_plane(x.data() + s * in_vol, layer.in_channels, g.nz, g.ny, g.nx, k, g.pad, z,
                   g.oy, g.ox, cols);
      gw.noalias() += dy.transpose() * cols;
      for (int o = 0; o < out; ++o) grads.grad_b[o] += dy.col(o).sum();
      dcols.noalias() = dy * w;
      // col2im: scatter-add each column entry back to its source voxel.
      for (int oy = 0; oy < g.oy; ++oy) {
        for (int ox = 0; ox < g.ox; ++ox) {
          const T* row = dcols.data() + (static_cast<Eigen::Index>(oy) * g.ox + ox) * width;
          for (int c = 0; c < layer.in_channels; ++c) {
            for (int kz = 0; kz < k; ++kz) {
              const int iz = z + kz - g.pad;
              for (int ky = 0; ky < k; ++ky) {
                const int iy = oy + ky - g.pad;
                for (int kx = 0; kx < k; ++kx, ++row) {
                  const int ix = ox + kx - g.pad;
                  if (iz < 0 || iz >= g.nz || iy < 0 || iy >= g.ny || ix < 0 || ix >= g.nx) {
                    continue;
                  }
                  gx[c * in_vol1 + iz * in_plane + static_cast<std::size_t>(iy) * g.nx + ix] +=
                      *row;
                }
              }
            }
          }
        }
      }
    }
  }
  return grads;
}

// ------------------------------------------------------------- batchnorm

template <class T>
BatchNormLayer<T>::BatchNormLayer(int c)
    : channels(c),
      gamma({static_cast<std::size_t>(c)}, T(1)),
      beta({static_cast<std::size_t>(c)}, T(0)),
      running_mean({static_cast<std::size_t>(c)}, T(0)),
      running_var({static_cast<std::size_t>(c)}, T(1)) {}

template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormLayer<T>& bn, bool train,
                            BatchNormCache<T>* cache) {
  if (x.rank() != 2 || static_cast<int>(x.dim(1)) != bn.channels) {
    throw Error(ErrorKind::kDimsMismatch, "batchnorm expects [n, channels]");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(x.dim(0));
  const int c = bn.channels;
  Tensor<T> y(x.shape());
  auto xm = as_matrix(x);
  auto ym = as_matrix(y);
  if (!train) {
    for (int j = 0; j < c; ++j) {
      const T inv = T(1) / std::sqrt(bn.running_var[j] + bn.epsilon);
      const T scale = bn.gamma[j] * inv;
      const T shift = bn.beta[j] - bn.running_mean[j] * scale;
      ym.col(j) = xm.col(j) * scale + Eigen::Matrix<T, Eigen::Dynamic, 1>::Constant(n, shift);
    }
    return y;
  }
  if (n == 0) throw Error(ErrorKind::kDimsMismatch, "batchnorm on empty batch");
  BatchNormCache<T> local;
  BatchNormCache<T>& cc = cache ? *cache : local;
  cc.xhat = Tensor<T>(x.shape());
  cc.inv_std.assign(static_cast<std::size_t>(c), T(0));
  auto xh = as_matrix(cc.xhat);
  for (int j = 0; j < c; ++j) {
    const T mean = xm.col(j).sum() / static_cast<T>(n);
    const T var = (xm.col(j).array() - mean).square().sum() / static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + bn.epsilon);
    cc.inv_std[static_cast<std::size_t>(j)] = inv;
    xh.col(j) = (xm.col(j).array() - mean) * inv;
    ym.col(j) = xh.col(j) * bn.gamma[j] +
                Eigen::Matrix<T, Eigen::Dynamic, 1>::Constant(n, bn.beta[j]);
    const T unbiased = n > 1 ? var * static_cast<T>(n) / static_cast<T>(n - 1) : var;
    bn.running_mean[j] = (T(1) - bn.momentum) * bn.running_mean[j] + bn.momentum * mean;
    bn.running_var[j] = (T(1) - bn.momentum) * bn.running_var[j] + bn.momentum * unbiased;
  }
  return y;
}

template <class T>
BatchNormGrads<T> batchnorm_backward(const BatchNormLayer<T>& bn,
                                     const BatchNormCache<T>& cache,
                                     const Tensor<T>& grad_out) {
  if (grad_out.shape() != cache.xhat.shape()) {
    throw Error(ErrorKind::kDimsMismatch, "batchnorm_backward shape mismatch");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(grad_out.dim(0));
  const int c = bn.channels;
  BatchNormGrads<T> g{Tensor<T>(grad_out.shape()), Tensor<T>(bn.gamma.shape()),
                      Tensor<T>(bn.beta.shape())};
  auto dy = as_matrix(grad_out);
  auto xh = as_matrix(cache.xhat);
  auto dx = as_matrix(g.grad_x);
  for (int j = 0; j < c; ++j) {
    const T sum_dy = dy.col(j).sum();
    const T sum_dy_xh = dy.col(j).dot(xh.col(j));
    g.grad_beta[j] = sum_dy;
    g.grad_gamma[j] = sum_dy_xh;
    const T k = bn.gamma[j] * cache.inv_std[static_cast<std::size_t>(j)] / static_cast<T>(n);
    dx.col(j) = k * (static_cast<T>(n) * dy.col(j).array() - sum_dy - xh.col(j).array() * sum_dy_xh)
                        .matrix();
  }
  return g;
}

template <class T>
void batchnorm_apply_eval(const BatchNormLayer<T>& bn, MatRM<T>& x) {
  for (int j = 0; j < bn.channels; ++j) {
    const T inv = T(1) / std::sqrt(bn.running_var[j] + bn.epsilon);
    const T scale = bn.gamma[j] * inv;
    const T shift = bn.beta[j] - bn.running_mean[j] * scale;
    x.col(j) = (x.col(j).array() * scale + shift).matrix();
  }
}

// ----------------------------------------------------------------- dense

template <class T>
DenseLayer<T>::DenseLayer(int in, int out)
    : in_features(in),
      out_features(out),
      weight({static_cast<std::size_t>(out), static_cast<std::size_t>(in)}),
      bias({static_cast<std::size_t>(out)}) {
  if (in < 1 || out < 1) throw Error(ErrorKind::kConfig, "invalid dense layer shape");
}

template <class T>
void DenseLayer<T>::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  for (auto& w : weight.span()) w = static_cast<T>(rng.uniform(-bound, bound));
  for (auto& b : bias.span()) b = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
Tensor<T> dense_forward(const Tensor<T>& x, const DenseLayer<T>& layer) {
  if (x.rank() != 2 || static_cast<int>(x.dim(1)) != layer.in_features) {
    throw Error(ErrorKind::kDimsMismatch, "dense expects [n, in_features]");
  }
  Tensor<T> y({x.dim(0), static_cast<std::size_t>(layer.out_features)});
  auto ym = as_matrix(y);
  ym.noalias() = as_matrix(x) * as_matrix(layer.weight).transpose();
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(layer.bias.data(),
                                                          layer.out_features);
  ym.rowwise() += b;
  return y;
}

template <class T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const DenseLayer<T>& layer,
                             const Tensor<T>& grad_out) {
  if (grad_out.rank() != 2 || grad_out.dim(0) != x.dim(0) ||
      static_cast<int>(grad_out.dim(1)) != layer.out_features) {
    throw Error(ErrorKind::kDimsMismatch, "dense_backward shape mismatch");
  }
  DenseGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(layer.weight.shape()),
                  Tensor<T>(layer.bias.shape())};
  auto dy = as_matrix(grad_out);
  as_matrix(g.grad_x).noalias() = dy * as_matrix(layer.weight);
  as_matrix(g.grad_w).noalias() = dy.transpose() * as_matrix(x);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.grad_b.data(), layer.out_features) =
      dy.colwise().sum();
  return g;
}

// ------------------------------------------------------------ activations

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  Tensor<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <class T>
Tensor<T> dropout_mask(const std::vector<std::size_t>& shape, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorKind::kConfig, "dropout p must lie in [0, 1)");
  Tensor<T> mask(shape, T(1));
  if (p == 0.0) return mask;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask.span()) m = rng.uniform() < p ? T(0) : keep_scale;
  return mask;
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw Error(ErrorKind::kDimsMismatch, "log_softmax expects [n, C]");
  Tensor<T> out(logits.shape());
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * c;
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  return out;
}

// -------------------------------------------------------------- optimizer

LrSchedule LrSchedule::cosine(double lr0, int epochs) {
  if (!(lr0 > 0) || epochs < 1) throw Error(ErrorKind::kConfig, "invalid cosine schedule");
  LrSchedule s;
  s.kind = Kind::kCosine;
  s.lr0 = lr0;
  s.epochs = epochs;
  return s;
}

LrSchedule LrSchedule::step(double lr0, std::vector<int> drops, double factor) {
  if (!(lr0 > 0) || !(factor > 0)) throw Error(ErrorKind::kConfig, "invalid step schedule");
  LrSchedule s;
  s.kind = Kind::kStep;
  s.lr0 = lr0;
  s.drop_epochs = std::move(drops);
  s.drop_factor = factor;
  return s;
}

double LrSchedule::lr(int epoch) const {
  switch (kind) {
    case Kind::kConstant:
      return lr0;
    case Kind::kCosine:
      return lr0 * (1.0 + std::cos(std::numbers::pi * epoch / epochs)) / 2.0;
    case Kind::kStep: {
      double lr = lr0;
      for (int d : drop_epochs) {
        if (epoch >= d) lr *= drop_factor;
      }
      return lr;
    }
  }
  return lr0;
}

template <class T>
void sgd_step(std::span<T> params, std::span<const T> grads, double lr) {
  if (params.size() != grads.size()) {
    throw Error(ErrorKind::kDimsMismatch, "sgd_step: parameter/gradient size mismatch");
  }
  const T step = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= step * grads[i];
}

#define MONETSEG_INSTANTIATE_NN(T)                                                        \
  template void check_finite<T>(const Tensor<T>&, const char*);                           \
  template struct ConvLayer<T>;                                                           \
  template void im2col_plane<T>(const T*, int, int, int, int, int, int, int, int, int,    \
                                MatRM<T>&);                                               \
  template Tensor<T> conv3d_forward<T>(const Tensor<T>&, const ConvLayer<T>&);            \
  template ConvGrads<T> conv3d_backward<T>(const Tensor<T>&, const ConvLayer<T>&,         \
                                           const Tensor<T>&);                             \
  template struct BatchNormLayer<T>;                                                      \
  template Tensor<T> batchnorm_forward<T>(const Tensor<T>&, BatchNormLayer<T>&, bool,     \
                                          BatchNormCache<T>*);                            \
  template BatchNormGrads<T> batchnorm_backward<T>(const BatchNormLayer<T>&,              \
                                                   const BatchNormCache<T>&,              \
                                                   const Tensor<T>&);                     \
  template void batchnorm_apply_eval<T>(const BatchNormLayer<T>&, MatRM<T>&);             \
  template struct DenseLayer<T>;                                                          \
  template Tensor<T> dense_forward<T>(const Tensor<T>&, const DenseLayer<T>&);            \
  template DenseGrads<T> dense_backward<T>(const Tensor<T>&, const DenseLayer<T>&,        \
                                           const Tensor<T>&);                             \
  template Tensor<T> relu_forward<T>(const Tensor<T>&);                                   \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> dropout_mask<T>(const std::vector<std::size_t>&, double, Rng&);      \
  template Tensor<T> log_softmax<T>(const Tensor<T>&);                                    \
  template void sgd_step<T>(std::span<T>, std::span<const T>, double);

MONETSEG_INSTANTIATE_NN(float)
MONETSEG_INSTANTIATE_NN(double)

}  // namespace monetseg
