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

#include <limits>
#include <span>
#include <vector>

#include "monetseg/volume.hpp"

namespace monetseg {

struct GeodesicConfig {
  double tau = 0.3;
  int connectivity = 26;  // 6 or 26
  int passes = 4;         // each pass sweeps forward+backward in all four octant orders
  double spatial_weight = 0.0;

  void validate() const;
};

inline constexpr double kInfiniteDistance = std::numeric_limits<double>::infinity();

/// Distance to the nearest seed; +inf where no seed is reachable (or no
/// seeds exist).
struct DistanceMap {
  Dims dims;
  std::vector<double> dist;
};

/// W = exp(-D / tau), exactly 1 on seeds and exactly 0 where D is infinite.
struct WeightMap {
  Dims dims;
  std::vector<double> w;
};

/// Raster-scan approximation of the intensity-geodesic distance. Edge cost
/// between neighbours i, j is |I(i) - I(j)| + spatial_weight * |dx|_mm.
DistanceMap geodesic_distance(const Volume& v, std::span<const std::size_t> seeds,
                              const GeodesicConfig& cfg);
DistanceMap geodesic_distance(const Volume& v, const ScribbleSet& s,
                              const GeodesicConfig& cfg);

/// Exact multi-seed shortest paths on the same grid graph (priority queue).
/// Limited to grids of at most 64 voxels per axis.
DistanceMap geodesic_distance_exact(const Volume& v, std::span<const std::size_t> seeds,
                                    const GeodesicConfig& cfg);

WeightMap weights_from_distance(const DistanceMap& d, double tau);

/// Neighbour offsets for the given connectivity, in a fixed order.
struct NeighborOffset {
  int dx, dy, dz;
};
std::vector<NeighborOffset> neighbor_offsets(int connectivity);

}  // namespace monetseg
