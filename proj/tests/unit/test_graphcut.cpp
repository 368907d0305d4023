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
#include "monetseg/error.hpp"
#include "monetseg/graphcut.hpp"
#include "monetseg/rng.hpp"

#include <cmath>
#include <limits>

using namespace monetseg;

namespace {

struct Instance {
  ProbMap prob;
  Volume volume;
};

Instance random_instance(Dims d, Rng& rng) {
  std::vector<float> p(d.size()), v(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    p[i] = static_cast<float>(rng.uniform());
    v[i] = static_cast<float>(rng.uniform());
  }
  return {ProbMap(d, p), Volume(d, {}, v)};
}

double exhaustive_minimum(const Instance& in, const GraphCutConfig& cfg, const ScribbleSet* s = nullptr) {
  const std::size_t n = in.prob.prob.size();
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::uint8_t> lab(n);
  for (std::uint32_t m = 0; m < (1u << n); ++m) {
    bool ok = true;
    for (std::size_t i = 0; i < n; ++i) {
      lab[i] = (m >> i) & 1u;
      if (s && s->contains(i) && lab[i] != (s->label_at(i) == Label::kForeground)) ok = false;
    }
    if (!ok) continue;
    best = std::min(best, energy_of(LabelMap(in.prob.dims, lab), in.prob, in.volume, cfg));
  }
  return best;
}

}  // namespace

TEST_CASE("energy hand cases") {
  const Dims d{2, 1, 1};
  const ProbMap p(d, std::vector<float>{0.9f, 0.2f});
  const Volume v(d, {}, {0.5f, 0.5f});
  const GraphCutConfig cfg;
  auto e = [&](std::uint8_t a, std::uint8_t b) {
    return energy_of(LabelMap(d, std::vector<std::uint8_t>{a, b}), p, v, cfg);
  };
  // differing labels pay lambda * exp(0) = 2.5
  CHECK(e(1, 0) == doctest::Approx(-std::log(0.9) - std::log(0.8) + 2.5));
  CHECK(e(0, 1) == doctest::Approx(-std::log(0.1) - std::log(0.2) + 2.5));
  CHECK(e(1, 1) == doctest::Approx(-std::log(0.9) - std::log(0.2)));
  CHECK(e(0, 0) == doctest::Approx(-std::log(0.1) - std::log(0.8)));
  // 1.715 (1,1) < 2.526 (0,0) < 2.829 (1,0) < 6.41 (0,1)
  const auto r = graphcut_solve(p, v, ScribbleSet(d), cfg);
  CHECK(r.labels.labels == std::vector<std::uint8_t>{1, 1});
  GraphCutConfig weak = cfg;
  weak.lambda = 0.1;
  CHECK(graphcut_refine(p, v, ScribbleSet(d), weak).labels == std::vector<std::uint8_t>{1, 0});
}

TEST_CASE("lambda zero reduces to the argmax") {
  Rng rng(1);
  GraphCutConfig cfg;
  cfg.lambda = 0;
  for (int t = 0; t < 20; ++t) {
    const auto in = random_instance({5, 4, 3}, rng);
    CHECK(graphcut_refine(in.prob, in.volume, ScribbleSet(in.prob.dims), cfg) == in.prob.argmax());
  }
}

TEST_CASE("confident foreground everywhere stays foreground") {
  Rng rng(2);
  const Dims d{6, 6, 6};
  std::vector<float> p(d.size());
  for (auto& x : p) x = static_cast<float>(0.99 + 0.01 * rng.uniform());
  const ProbMap prob(d, p);
  const auto in = random_instance(d, rng);
  for (double lambda : {0.0, 2.5, 100.0}) {
    GraphCutConfig cfg;
    cfg.lambda = lambda;
    const auto out = graphcut_refine(prob, in.volume, ScribbleSet(d), cfg);
    CHECK(out.labels == std::vector<std::uint8_t>(d.size(), 1));
  }
}

TEST_CASE("solver matches the exhaustive minimum on 3x2x2 grids") {
  Rng rng(3);
  const GraphCutConfig cfg;
  for (int t = 0; t < 60; ++t) {
    const auto in = random_instance({3, 2, 2}, rng);
    const auto r = graphcut_solve(in.prob, in.volume, ScribbleSet(in.prob.dims), cfg);
    CHECK(r.energy == exhaustive_minimum(in, cfg));
  }
}

TEST_CASE("exhaustive check with strong smoothing and hard constraints") {
  Rng rng(4);
  for (int t = 0; t < 30; ++t) {
    const Dims d = t % 2 ? Dims{4, 2, 2} : Dims{2, 2, 3};
    const auto in = random_instance(d, rng);
    GraphCutConfig cfg;
    cfg.lambda = 0.5 + 5 * rng.uniform();
    cfg.sigma = 0.05 + 0.5 * rng.uniform();
    ScribbleSet s(d);
    s.add(rng.below(d.size()), Label::kForeground);
    s.add(rng.below(d.size()), Label::kBackground);
    const auto r = graphcut_solve(in.prob, in.volume, s, cfg);
    for (auto i : s.foreground()) CHECK(r.labels.labels[i] == 1);
    for (auto i : s.background()) CHECK(r.labels.labels[i] == 0);
    CHECK(r.energy == doctest::Approx(exhaustive_minimum(in, cfg, &s)).epsilon(1e-12));
  }
}

TEST_CASE("max-flow value equals cut energy minus the terminal constant") {
  Rng rng(5);
  const GraphCutConfig cfg;
  for (int t = 0; t < 20; ++t) {
    const auto in = random_instance({7, 6, 5}, rng);
    const auto r = graphcut_solve(in.prob, in.volume, ScribbleSet(in.prob.dims), cfg);
    CHECK(r.flow == doctest::Approx(r.energy - r.constant).epsilon(1e-9));
    CHECK(r.energy == doctest::Approx(energy_of(r.labels, in.prob, in.volume, cfg)));
  }
}

TEST_CASE("scribble constraints hold against strong contrary evidence") {
  const Dims d{8, 8, 8};
  const ProbMap p(d, std::vector<float>(d.size(), 0.999f));
  const Volume v(d, {}, std::vector<float>(d.size(), 0.5f));
  ScribbleSet s(d);
  s.add(Coord{4, 4, 4}, Label::kBackground);
  s.add(Coord{0, 0, 0}, Label::kBackground);
  const auto out = graphcut_refine(p, v, s, {});
  CHECK(out.labels[linear_index({4, 4, 4}, d)] == 0);
  CHECK(out.labels[0] == 0);
  CHECK(out.labels[linear_index({7, 7, 7}, d)] == 1);
}

TEST_CASE("discontinuities do not increase with lambda on average") {
  const Dims d{10, 10, 10};
  const std::vector<double> lambdas{0.0, 0.5, 1.0, 2.5, 5.0};
  std::vector<double> mean(lambdas.size(), 0.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const auto in = random_instance(d, rng);
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
      GraphCutConfig cfg;
      cfg.lambda = lambdas[k];
      mean[k] += static_cast<double>(label_discontinuities(graphcut_refine(in.prob, in.volume, ScribbleSet(d), cfg)));
    }
  }
  for (std::size_t k = 1; k < mean.size(); ++k) CHECK(mean[k] <= mean[k - 1]);
  CHECK(mean.back() < mean.front());
}

TEST_CASE("saturated probabilities are clamped") {
  const Dims d{3, 1, 1};
  const ProbMap p(d, std::vector<float>{0.0f, 1.0f, 0.0f});
  const Volume v(d, {}, {0.0f, 0.0f, 0.0f});
  const auto r = graphcut_solve(p, v, ScribbleSet(d), {});
  CHECK(std::isfinite(r.energy));
  CHECK(std::isfinite(r.flow));
}

TEST_CASE("max-flow on a textbook graph") {
  // s->0 (3), s->1 (2), 0->1 (1), 0->t (2), 1->t (3): max flow 5
  MaxFlowGraph g(2);
  g.add_tweights(0, 3, 2);
  g.add_tweights(1, 2, 3);
  g.add_edge(0, 1, 1, 0);
  CHECK(g.maxflow() == doctest::Approx(5.0));
  MaxFlowGraph h(3);
  h.add_tweights(0, 10, 0);
  h.add_tweights(2, 0, 10);
  h.add_edge(0, 1, 4, 0);
  h.add_edge(1, 2, 3, 0);
  CHECK(h.maxflow() == doctest::Approx(3.0));
  CHECK(h.source_side(0));
  CHECK(h.source_side(1));
  CHECK_FALSE(h.source_side(2));
}

TEST_CASE("config and dims are validated") {
  GraphCutConfig cfg;
  cfg.sigma = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.connectivity = 26;
  CHECK_THROWS_AS(cfg.validate(), Error);
  const ProbMap p({2, 2, 2}, std::vector<float>(8, 0.5f));
  const Volume v({2, 2, 1}, {}, std::vector<float>(4, 0.0f));
  CHECK_THROWS_AS(graphcut_refine(p, v, ScribbleSet({2, 2, 2}), {}), Error);
}
