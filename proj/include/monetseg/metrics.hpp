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

#include <optional>
#include <string>
#include <vector>

#include "monetseg/volume.hpp"

namespace monetseg {

/// 2|A n B| / (|A| + |B|) over foreground; two empty masks score 1.
double dice(const LabelMap& a, const LabelMap& b);

/// Foreground voxels with at least one background 6-neighbour (voxels on
/// the grid border count as touching background).
std::vector<std::size_t> surface_voxels(const LabelMap& m);

enum class AssdMethod { kAuto, kBruteForce, kDistanceTransform };

/// Average symmetric surface distance in mm. Throws kUndefinedMetric when
/// either mask is empty. kAuto uses brute force for small surfaces and the
/// exact separable distance transform otherwise.
double assd(const LabelMap& a, const LabelMap& b, const Spacing& spacing,
            AssdMethod method = AssdMethod::kAuto);

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// feature voxel; +inf everywhere when there are no features.
std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& features,
                                               const Dims& dims, const Spacing& spacing);

struct StageTimes {
  double weights = 0;
  double train = 0;
  double infer = 0;
  double graphcut = 0;
};

struct EvalReport {
  int round = 0;
  std::optional<double> dice;
  std::optional<double> assd;
  std::size_t scribble_voxels = 0;
  StageTimes times;
};

/// One JSON object per line with fixed keys: round, dice, assd,
/// scribble_voxels, t_weights, t_train, t_infer, t_graphcut. dice/assd are
/// omitted when no ground truth was supplied; an undefined assd is null.
std::string format_report_line(const EvalReport& r, bool has_ground_truth,
                               bool include_timings = true);

}  // namespace monetseg
