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

#include "doctest.h"
#include "gradcheck.hpp"
#include "monetseg/error.hpp"
#include "monetseg/nn.hpp"

#include <cmath>

using namespace monetseg;
using monetseg::testing::check_gradient;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1, 1);
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Direct six-nested-loop valid cross-correlation.
Tensor<double> naive_conv(const Tensor<double>& x, const ConvLayer<double>& l) {
  const int k = l.kernel;
  const int nz = static_cast<int>(x.dim(2)), ny = static_cast<int>(x.dim(3)), nx = static_cast<int>(x.dim(4));
  const int oz = nz - k + 1, oy = ny - k + 1, ox = nx - k + 1;
  const auto n = x.dim(0);
  Tensor<double> out({n, static_cast<std::size_t>(l.out_channels), static_cast<std::size_t>(oz),
                      static_cast<std::size_t>(oy), static_cast<std::size_t>(ox)});
  for (std::size_t b = 0; b < n; ++b)
    for (int o = 0; o < l.out_channels; ++o)
      for (int z = 0; z < oz; ++z)
        for (int y = 0; y < oy; ++y)
          for (int xx = 0; xx < ox; ++xx) {
            double s = l.bias[static_cast<std::size_t>(o)];
            for (int c = 0; c < l.in_channels; ++c)
              for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const std::size_t wi = (((static_cast<std::size_t>(o) * l.in_channels + c) * k + kz) * k + ky) * k + kx;
                    const std::size_t xi = (((b * l.in_channels + c) * nz + z + kz) * ny + y + ky) * nx + xx + kx;
                    s += l.weight[wi] * x[xi];
                  }
            out[(((b * l.out_channels + o) * oz + z) * oy + y) * ox + xx] = s;
          }
  return out;
}

}  // namespace

TEST_CASE("k=1 identity mixing returns the input") {
  Rng rng(1);
  ConvLayer<double> l(1, 3, 3);
  l.weight.fill(0);
  for (int c = 0; c < 3; ++c) l.weight[static_cast<std::size_t>(c * 3 + c)] = 1;
  const auto x = random_tensor({2, 3, 3, 4, 5}, rng);
  CHECK(conv3d_forward(x, l) == x);
}

TEST_CASE("zero weights give the bias everywhere") {
  Rng rng(2);
  ConvLayer<double> l(3, 2, 2, Padding::kSameZero);
  l.weight.fill(0);
  l.bias[0] = 0.25;
  l.bias[1] = -2;
  const auto y = conv3d_forward(random_tensor({1, 2, 4, 4, 4}, rng), l);
  for (std::size_t i = 0; i < 64; ++i) CHECK(y[i] == 0.25);
  for (std::size_t i = 64; i < 128; ++i) CHECK(y[i] == -2);
}

TEST_CASE("valid conv matches direct summation") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed);
    ConvLayer<double> l(3, 1, 2);
    l.init(rng);
    const auto x = random_tensor({1, 1, 5, 5, 5}, rng);
    const auto y = conv3d_forward(x, l);
    const auto ref = naive_conv(x, l);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) <= 1e-6);
  }
}

TEST_CASE("same-zero conv equals valid conv of the zero-padded input") {
  Rng rng(3);
  ConvLayer<double> same(5, 2, 3, Padding::kSameZero);
  same.init(rng);
  ConvLayer<double> valid = same;
  valid.padding = Padding::kValid;
  const auto x = random_tensor({1, 2, 4, 5, 6}, rng);
  Tensor<double> padded({1, 2, 8, 9, 10});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t z = 0; z < 4; ++z)
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t xx = 0; xx < 6; ++xx)
          padded[((c * 8 + z + 2) * 9 + y + 2) * 10 + xx + 2] = x[((c * 4 + z) * 5 + y) * 6 + xx];
  const auto a = conv3d_forward(x, same);
  const auto b = conv3d_forward(padded, valid);
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  CHECK_THROWS_AS(ConvLayer<double>(2, 1, 1, Padding::kSameZero), Error);
}

TEST_CASE("conv backward: zero upstream gradient and the k=1 scalar case") {
  Rng rng(4);
  ConvLayer<double> l(3, 2, 2, Padding::kSameZero);
  l.init(rng);
  const auto x = random_tensor({1, 2, 3, 3, 3}, rng);
  const auto g = conv3d_backward(x, l, Tensor<double>({1, 2, 3, 3, 3}));
  for (const auto* t : {&g.grad_x, &g.grad_w, &g.grad_b})
    for (std::size_t i = 0; i < t->size(); ++i) CHECK((*t)[i] == 0.0);

  ConvLayer<double> one(1, 1, 1);
  one.weight[0] = 0.7;
  Tensor<double> xs({1, 1, 1, 1, 1}, 1.5), go({1, 1, 1, 1, 1}, -2.0);
  const auto s = conv3d_backward(xs, one, go);
  CHECK(s.grad_w[0] == doctest::Approx(-3.0));
  CHECK(s.grad_b[0] == doctest::Approx(-2.0));
  CHECK(s.grad_x[0] == doctest::Approx(-1.4));
}

TEST_CASE("conv gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    for (Padding pad : {Padding::kValid, Padding::kSameZero}) {
      ConvLayer<double> l(3, 2, 2, pad);
      l.init(rng);
      auto x = random_tensor({2, 2, 4, 4, 3}, rng);
      const auto y0 = conv3d_forward(x, l);
      const auto r = random_tensor(y0.shape(), rng);
      const auto g = conv3d_backward(x, l, r);
      auto loss = [&] { return dot(conv3d_forward(x, l), r); };
      CHECK(check_gradient(x.span(), g.grad_x.span(), loss).max_rel_error < 1e-4);
      CHECK(check_gradient(l.weight.span(), g.grad_w.span(), loss).max_rel_error < 1e-4);
      CHECK(check_gradient(l.bias.span(), g.grad_b.span(), loss).max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("batchnorm forward rules") {
  BatchNormLayer<double> bn(2);
  bn.beta[0] = 0.5;
  bn.beta[1] = -1;
  Tensor<double> constant({4, 2}, 3.0);
  const auto y = batchnorm_forward(constant, bn, true, static_cast<BatchNormCache<double>*>(nullptr));
  for (std::size_t i = 0; i < 8; ++i) CHECK(y[i] == doctest::Approx(i % 2 == 0 ? 0.5 : -1.0));
  CHECK(bn.running_mean[0] == doctest::Approx(0.3));

  BatchNormLayer<double> ev(1);
  ev.running_mean[0] = 2;
  ev.running_var[0] = 4 - 1e-5;
  ev.gamma[0] = 3;
  Tensor<double> x({2, 1});
  x[0] = 4;
  x[1] = 0;
  const auto z = batchnorm_forward(x, ev, false, static_cast<BatchNormCache<double>*>(nullptr));
  CHECK(z[0] == doctest::Approx(3.0));
  CHECK(z[1] == doctest::Approx(-3.0));
  CHECK(ev.running_mean[0] == 2);
}

TEST_CASE("batchnorm gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    BatchNormLayer<double> bn(3);
    for (std::size_t c = 0; c < 3; ++c) {
      bn.gamma[c] = rng.uniform(0.5, 1.5);
      bn.beta[c] = rng.uniform(-1, 1);
    }
    auto x = random_tensor({6, 3}, rng);
    const auto r = random_tensor({6, 3}, rng);
    BatchNormCache<double> cache;
    BatchNormLayer<double> scratch = bn;
    batchnorm_forward(x, scratch, true, &cache);
    const auto g = batchnorm_backward(bn, cache, r);
    auto loss = [&] {
      BatchNormLayer<double> b = bn;
      return dot(batchnorm_forward(x, b, true, static_cast<BatchNormCache<double>*>(nullptr)), r);
    };
    // small step: batchnorm curvature makes the h = 1e-3 truncation error ~1e-4
    CHECK(check_gradient(x.span(), g.grad_x.span(), loss, 1e-5).max_rel_error < 1e-4);
    CHECK(check_gradient(bn.gamma.span(), g.grad_gamma.span(), loss, 1e-5).max_rel_error < 1e-4);
    CHECK(check_gradient(bn.beta.span(), g.grad_beta.span(), loss, 1e-5).max_rel_error < 1e-4);
  }
}

TEST_CASE("dense gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    DenseLayer<double> l(5, 3);
    l.init(rng);
    auto x = random_tensor({4, 5}, rng);
    const auto r = random_tensor({4, 3}, rng);
    const auto g = dense_backward(x, l, r);
    auto loss = [&] { return dot(dense_forward(x, l), r); };
    CHECK(check_gradient(x.span(), g.grad_x.span(), loss).max_rel_error < 1e-4);
    CHECK(check_gradient(l.weight.span(), g.grad_w.span(), loss).max_rel_error < 1e-4);
    CHECK(check_gradient(l.bias.span(), g.grad_b.span(), loss).max_rel_error < 1e-4);
  }
}

TEST_CASE("relu gradient matches central differences away from zero") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 7}, rng);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::abs(x[i]) < 0.01) x[i] = 0.5;
    const auto r = random_tensor({3, 7}, rng);
    const auto g = relu_backward(x, r);
    auto loss = [&] { return dot(relu_forward(x), r); };
    CHECK(check_gradient(x.span(), g.span(), loss).max_rel_error < 1e-4);
  }
}

TEST_CASE("log_softmax values and gradient") {
  Tensor<double> z({1, 2});
  const auto l = log_softmax(z);
  CHECK(l[0] == doctest::Approx(-std::log(2.0)));
  CHECK(l[1] == doctest::Approx(-std::log(2.0)));
  Tensor<double> big({1, 2});
  big[0] = 1000;
  big[1] = -1000;
  const auto lb = log_softmax(big);
  CHECK(lb[0] == doctest::Approx(0.0));
  CHECK(lb[1] == doctest::Approx(-2000.0));
}

TEST_CASE("dropout") {
  Rng rng(5);
  const auto id = dropout_mask<double>({10, 4}, 0.0, rng);
  for (std::size_t i = 0; i < id.size(); ++i) CHECK(id[i] == 1.0);
  const auto m = dropout_mask<double>({1000, 10}, 0.3, rng);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK((m[i] == 0.0 || m[i] == doctest::Approx(1.0 / 0.7)));
    kept += m[i] != 0.0;
  }
  CHECK(static_cast<double>(kept) / 10000 == doctest::Approx(0.7).epsilon(0.03));
  CHECK_THROWS_AS(dropout_mask<double>({2}, 1.0, rng), Error);
  Rng a(9), b(9);
  CHECK(dropout_mask<double>({50}, 0.5, a) == dropout_mask<double>({50}, 0.5, b));
}

TEST_CASE("learning-rate schedules") {
  const auto cos = LrSchedule::cosine(1e-2, 200);
  CHECK(cos.lr(0) == doctest::Approx(1e-2));
  CHECK(cos.lr(200) == doctest::Approx(0.0));
  CHECK(cos.lr(100) == doctest::Approx(5e-3));
  const auto step = LrSchedule::step(1e-3, {35, 45});
  CHECK(step.lr(34) == doctest::Approx(1e-3));
  CHECK(step.lr(35) == doctest::Approx(1e-4));
  CHECK(step.lr(44) == doctest::Approx(1e-4));
  CHECK(step.lr(45) == doctest::Approx(1e-5));
}

TEST_CASE("sgd step") {
  std::vector<double> p{1, 2, 3};
  const std::vector<double> zero(3, 0.0);
  sgd_step<double>(p, zero, 0.1);
  CHECK(p == std::vector<double>{1, 2, 3});
  const std::vector<double> g{1, -1, 0.5};
  sgd_step<double>(p, g, 0.1);
  CHECK(p[0] == doctest::Approx(0.9));
  CHECK(p[1] == doctest::Approx(2.1));
  CHECK(p[2] == doctest::Approx(2.95));
}
