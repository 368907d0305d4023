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

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "monetseg/volume.hpp"

namespace monetseg {

struct PhantomSpec {
  Dims dims{32, 32, 32};
  Spacing spacing{1.0, 1.0, 1.0};
  int blobs = 1;
  double radius_min = 4.0;  // voxels, per semi-axis
  double radius_max = 8.0;
  double contrast = 0.6;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
  /// True when the blobs are barely separable from the noise.
  bool low_contrast() const { return contrast <= 2.0 * noise_std; }
};

struct Phantom {
  Volume volume;
  LabelMap truth;
};

/// Non-overlapping ellipsoids of intensity bg + contrast on a background of
/// (1 - contrast) / 2, plus Gaussian noise. Throws kConfig when a blob
/// cannot be placed after a bounded number of attempts.
Phantom make_phantom(const PhantomSpec& spec);

struct CorruptionSpec {
  double amplitude = 0.0;  // voxels; > 0 erodes, < 0 dilates
  double drop_probability = 0.0;
  int false_positive_blobs = 0;
  double false_positive_radius = 3.0;
  double temperature = 1.0;  // logistic temperature of P, in voxels
  std::uint64_t seed = 0;

  void validate() const;
};

struct Corruption {
  LabelMap seg;
  ProbMap prob;
  double dice = 0;  // Dice(truth, seg)
};

/// Drops whole components, perturbs the boundary by thresholding the
/// distance transform, adds spherical false positives in the background,
/// and derives P as a logistic of the signed distance to the boundary of C.
Corruption corrupt_segmentation(const LabelMap& truth, const CorruptionSpec& spec);

/// Searches amplitude (and, failing that, successive corruption seeds) until
/// Dice lands in [lo, hi]. Deterministic; throws kConfig when no setting in
/// the search grid succeeds.
Corruption calibrate_corruption(const LabelMap& truth, CorruptionSpec spec, double lo, double hi,
                                CorruptionSpec* chosen = nullptr);

struct ScribblerConfig {
  int max_per_round = 4;
  std::size_t min_component = 10;
  int min_length = 3;
  int max_length = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

ScribblerConfig parse_scribbler_config(std::string_view text, ScribblerConfig base = {});

/// 6-connected components of `mask`. Returns the component id per voxel
/// (-1 outside the mask) and the component sizes, ids in raster order of
/// first voxel.
std::pair<std::vector<int>, std::vector<std::size_t>> connected_components(
    const std::vector<std::uint8_t>& mask, const Dims& dims);

/// Emulates a user: one short axis-aligned stroke per large error component
/// (largest first), anchored at the component's deepest voxel and labeled
/// with the true class. Never touches voxels already in `existing`.
ScribbleSet synthesize_scribbles(const LabelMap& pred, const LabelMap& truth,
                                 const ScribblerConfig& cfg, const ScribbleSet& existing);

}  // namespace monetseg
