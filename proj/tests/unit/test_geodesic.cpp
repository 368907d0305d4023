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
#include "monetseg/geodesic.hpp"
#include "monetseg/rng.hpp"

#include <cmath>

using namespace monetseg;

namespace {

Volume random_volume(Dims d, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<float> v(d.size());
  for (auto& x : v) x = static_cast<float>(scale * rng.uniform());
  return Volume(d, {}, std::move(v));
}

std::vector<std::size_t> random_seeds(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> s;
  for (std::size_t i = 0; i < count; ++i) s.push_back(rng.below(n));
  return s;
}

}  // namespace

TEST_CASE("seeds are at distance zero") {
  const Volume v = random_volume({6, 5, 4}, 1);
  const std::vector<std::size_t> seeds{0, 17, 119};
  const auto d = geodesic_distance(v, seeds, {});
  for (auto s : seeds) CHECK(d.dist[s] == 0.0);
}

TEST_CASE("constant volume gives zero distance everywhere") {
  const Volume v({5, 5, 5}, {}, std::vector<float>(125, 0.4f));
  const std::vector<std::size_t> seeds{62};
  for (int conn : {6, 26}) {
    GeodesicConfig cfg;
    cfg.connectivity = conn;
    const auto fast = geodesic_distance(v, seeds, cfg);
    const auto exact = geodesic_distance_exact(v, seeds, cfg);
    CHECK(fast.dist == std::vector<double>(125, 0.0));
    CHECK(exact.dist == fast.dist);
  }
}

TEST_CASE("intensity step of height 1") {
  // 4x4x1, left two columns 0, right two columns 1; seed at (0, 0).
  std::vector<float> vals(16);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) vals[static_cast<std::size_t>(x + 4 * y)] = x < 2 ? 0.0f : 1.0f;
  const Volume v({4, 4, 1}, {}, vals);
  const std::vector<std::size_t> seeds{0};
  const auto d = geodesic_distance(v, seeds, {});
  const auto oracle = geodesic_distance_exact(v, seeds, {});
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(d.dist[i] == doctest::Approx(vals[i] == 0.0f ? 0.0 : 1.0));
    CHECK(oracle.dist[i] == doctest::Approx(d.dist[i]));
  }
}

TEST_CASE("no seeds gives infinite distance") {
  const Volume v = random_volume({4, 4, 4}, 2);
  const auto d = geodesic_distance(v, std::span<const std::size_t>{}, {});
  const auto e = geodesic_distance_exact(v, std::span<const std::size_t>{}, {});
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(std::isinf(d.dist[i]));
    CHECK(std::isinf(e.dist[i]));
  }
  CHECK(weights_from_distance(d, 0.3).w == std::vector<double>(v.size(), 0.0));
}

TEST_CASE("raster scan converges to the oracle with many passes") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Volume v = random_volume({8, 8, 8}, 10 + seed);
    Rng rng(seed);
    const auto seeds = random_seeds(v.size(), 3, rng);
    GeodesicConfig cfg;
    cfg.passes = 40;
    const auto fast = geodesic_distance(v, seeds, cfg);
    const auto exact = geodesic_distance_exact(v, seeds, cfg);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(fast.dist[i] == doctest::Approx(exact.dist[i]).epsilon(1e-12));
  }
}

TEST_CASE("raster scan over-approximates and 4 passes are within 1% of the range") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Volume v = random_volume({16, 16, 16}, 100 + seed);
    Rng rng(seed + 7);
    const auto seeds = random_seeds(v.size(), 4, rng);
    const auto fast = geodesic_distance(v, seeds, {});
    const auto exact = geodesic_distance_exact(v, seeds, {});
    double gap = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(fast.dist[i] >= exact.dist[i] - 1e-12);
      gap = std::max(gap, fast.dist[i] - exact.dist[i]);
    }
    CHECK(gap <= 0.01 * (v.hi() - v.lo()));
  }
}

TEST_CASE("adding seeds never increases a distance") {
  const Volume v = random_volume({10, 9, 8}, 5);
  Rng rng(5);
  auto seeds = random_seeds(v.size(), 2, rng);
  const auto before = geodesic_distance_exact(v, seeds, {});
  seeds.push_back(rng.below(v.size()));
  const auto after = geodesic_distance_exact(v, seeds, {});
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(after.dist[i] <= before.dist[i]);
}

TEST_CASE("distances scale with intensity") {
  const Volume v = random_volume({7, 7, 7}, 8);
  const Volume v3 = random_volume({7, 7, 7}, 8, 3.0);
  const std::vector<std::size_t> seeds{3, 200};
  const auto a = geodesic_distance_exact(v, seeds, {});
  const auto b = geodesic_distance_exact(v3, seeds, {});
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(b.dist[i] == doctest::Approx(3.0 * a.dist[i]).epsilon(1e-5));
}

TEST_CASE("spatial term adds path length in millimetres") {
  const Volume v({5, 1, 1}, {2.0, 1.0, 1.0}, std::vector<float>(5, 0.0f));
  GeodesicConfig cfg;
  cfg.spatial_weight = 0.5;
  cfg.connectivity = 6;
  const std::vector<std::size_t> seeds{0};
  const auto d = geodesic_distance(v, seeds, cfg);
  for (std::size_t i = 0; i < 5; ++i) CHECK(d.dist[i] == doctest::Approx(0.5 * 2.0 * static_cast<double>(i)));
}

TEST_CASE("weights from distance") {
  DistanceMap d{{4, 1, 1}, {0.0, 0.3, 0.6, kInfiniteDistance}};
  const auto w = weights_from_distance(d, 0.3);
  CHECK(w.w[0] == 1.0);
  CHECK(std::abs(w.w[1] - std::exp(-1.0)) <= 1e-6);
  CHECK(w.w[1] == doctest::Approx(0.3679).epsilon(1e-4));
  CHECK(w.w[2] < w.w[1]);
  CHECK(w.w[3] == 0.0);
  CHECK_THROWS_AS(weights_from_distance(d, 0.0), Error);
}

TEST_CASE("weights decrease strictly in finite distance") {
  DistanceMap d{{50, 1, 1}, {}};
  for (int i = 0; i < 50; ++i) d.dist.push_back(0.05 * i);
  const auto w = weights_from_distance(d, 0.3);
  for (std::size_t i = 1; i < 50; ++i) CHECK(w.w[i] < w.w[i - 1]);
}

TEST_CASE("configuration is validated") {
  GeodesicConfig cfg;
  cfg.connectivity = 18;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.connectivity = 6;
  cfg.passes = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK(neighbor_offsets(6).size() == 6);
  CHECK(neighbor_offsets(26).size() == 26);
}
