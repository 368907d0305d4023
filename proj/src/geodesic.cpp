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

#include "monetseg/geodesic.hpp"

#include <cmath>
#include <functional>
#include <queue>
#include <string>

#include "monetseg/error.hpp"

namespace monetseg {

void GeodesicConfig::validate() const {
  if (!(tau > 0)) throw Error(ErrorKind::kConfig, "geodesic tau must be positive");
  if (connectivity != 6 && connectivity != 26) {
    throw Error(ErrorKind::kConfig, "geodesic connectivity must be 6 or 26");
  }
  if (passes < 1) throw Error(ErrorKind::kConfig, "geodesic passes must be >= 1");
  if (!(spatial_weight >= 0)) {
    throw Error(ErrorKind::kConfig, "geodesic spatial_weight must be >= 0");
  }
}

std::vector<NeighborOffset> neighbor_offsets(int connectivity) {
  std::vector<NeighborOffset> out;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (connectivity == 6 && manhattan != 1) continue;
        out.push_back({dx, dy, dz});
      }
    }
  }
  return out;
}

namespace {

struct Edge {
  NeighborOffset off;
  double spatial;  // spatial_weight * step length in mm
};

std::vector<Edge> make_edges(const Volume& v, const GeodesicConfig& cfg) {
  std::vector<Edge> edges;
  const auto& s = v.spacing();
  for (const auto& o : neighbor_offsets(cfg.connectivity)) {
    const double len = std::sqrt(o.dx * o.dx * s.sx * s.sx + o.dy * o.dy * s.sy * s.sy +
                                 o.dz * o.dz * s.sz * s.sz);
    edges.push_back({o, cfg.spatial_weight * len});
  }
  return edges;
}

DistanceMap seeded_map(const Volume& v, std::span<const std::size_t> seeds) {
  DistanceMap d{v.dims(), std::vector<double>(v.size(), kInfiniteDistance)};
  for (auto i : seeds) {
    if (i >= v.size()) {
      throw Error(ErrorKind::kBounds, "seed index " + std::to_string(i) + " outside volume");
    }
    d.dist[i] = 0.0;
  }
  return d;
}

inline double edge_cost(float a, float b, double spatial) {
  return std::abs(static_cast<double>(a) - static_cast<double>(b)) + spatial;
}

// Offsets already visited when scanning with per-axis directions (sx, sy, sz);
// z is the slowest axis.
bool is_causal(const NeighborOffset& o, int sx, int sy, int sz) {
  if (o.dz != 0) return o.dz * sz < 0;
  if (o.dy != 0) return o.dy * sy < 0;
  return o.dx * sx < 0;
}

}  // namespace

DistanceMap geodesic_distance(const Volume& v, std::span<const std::size_t> seeds,
                              const GeodesicConfig& cfg) {
  cfg.validate();
  DistanceMap d = seeded_map(v, seeds);
  if (seeds.empty()) return d;

  const Dims& dims = v.dims();
  const auto edges = make_edges(v, cfg);
  auto data = v.data();

  // One pass is a forward/backward sweep pair for each of the four octant
  // orderings, so paths turning in any direction are picked up every pass.
  static constexpr int kOrders[8][3] = {{1, 1, 1},  {-1, -1, -1}, {-1, 1, 1}, {1, -1, -1},
                                        {1, -1, 1}, {-1, 1, -1},  {1, 1, -1}, {-1, -1, 1}};
  std::vector<Edge> causal[8];
  for (int k = 0; k < 8; ++k) {
    for (const auto& e : edges) {
      if (is_causal(e.off, kOrders[k][0], kOrders[k][1], kOrders[k][2])) causal[k].push_back(e);
    }
  }

  auto relax = [&](int x, int y, int z, const std::vector<Edge>& es) {
    const std::size_t i = linear_index_unchecked(x, y, z, dims);
    double best = d.dist[i];
    const float vi = data[i];
    for (const auto& e : es) {
      const int nx = x + e.off.dx, ny = y + e.off.dy, nz = z + e.off.dz;
      if (!dims.contains(nx, ny, nz)) continue;
      const std::size_t j = linear_index_unchecked(nx, ny, nz, dims);
      const double cand = d.dist[j] + edge_cost(data[j], vi, e.spatial);
      if (cand < best) best = cand;
    }
    d.dist[i] = best;
  };

  for (int pass = 0; pass < cfg.passes; ++pass) {
    for (int k = 0; k < 8; ++k) {
      const int sx = kOrders[k][0], sy = kOrders[k][1], sz = kOrders[k][2];
      for (int zi = 0; zi < dims.nz; ++zi) {
        const int z = sz > 0 ? zi : dims.nz - 1 - zi;
        for (int yi = 0; yi < dims.ny; ++yi) {
          const int y = sy > 0 ? yi : dims.ny - 1 - yi;
          for (int xi = 0; xi < dims.nx; ++xi) {
            relax(sx > 0 ? xi : dims.nx - 1 - xi, y, z, causal[k]);
          }
        }
      }
    }
  }
  return d;
}

DistanceMap geodesic_distance(const Volume& v, const ScribbleSet& s,
                              const GeodesicConfig& cfg) {
  require_same_dims(v.dims(), s.dims(), "geodesic_distance");
  const auto seeds = s.all();
  return geodesic_distance(v, seeds, cfg);
}

DistanceMap geodesic_distance_exact(const Volume& v, std::span<const std::size_t> seeds,
                                    const GeodesicConfig& cfg) {
  cfg.validate();
  const Dims& dims = v.dims();
  if (dims.nx > 64 || dims.ny > 64 || dims.nz > 64) {
    throw Error(ErrorKind::kConfig, "exact geodesic oracle limited to 64^3 grids");
  }
  DistanceMap d = seeded_map(v, seeds);
  const auto edges = make_edges(v, cfg);
  auto data = v.data();

  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (auto i : seeds) heap.emplace(0.0, i);
  std::vector<char> done(v.size(), 0);
  while (!heap.empty()) {
    const auto [di, i] = heap.top();
    heap.pop();
    if (done[i] || di > d.dist[i]) continue;
    done[i] = 1;
    const Coord c = coord_of(i, dims);
    for (const auto& e : edges) {
      const int nx = c.x + e.off.dx, ny = c.y + e.off.dy, nz = c.z + e.off.dz;
      if (!dims.contains(nx, ny, nz)) continue;
      const std::size_t j = linear_index_unchecked(nx, ny, nz, dims);
      if (done[j]) continue;
      const double cand = di + edge_cost(data[i], data[j], e.spatial);
      if (cand < d.dist[j]) {
        d.dist[j] = cand;
        heap.emplace(cand, j);
      }
    }
  }
  return d;
}

WeightMap weights_from_distance(const DistanceMap& d, double tau) {
  if (!(tau > 0)) throw Error(ErrorKind::kConfig, "tau must be positive");
  WeightMap w{d.dims, std::vector<double>(d.dist.size(), 0.0)};
  for (std::size_t i = 0; i < d.dist.size(); ++i) {
    const double di = d.dist[i];
    if (di == 0.0) {
      w.w[i] = 1.0;
    } else if (std::isinf(di)) {
      w.w[i] = 0.0;
    } else {
      w.w[i] = std::exp(-di / tau);
    }
  }
  return w;
}

}  // namespace monetseg
