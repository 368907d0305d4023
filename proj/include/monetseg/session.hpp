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
#include <optional>
#include <string>

#include "monetseg/error.hpp"
#include "monetseg/geodesic.hpp"
#include "monetseg/graphcut.hpp"
#include "monetseg/metrics.hpp"
#include "monetseg/monet.hpp"
#include "monetseg/volume.hpp"

namespace monetseg {

/// Error raised inside refine_round, tagged with the pipeline stage
/// (weights, prune, samples, train, infer, graphcut).
class StageError : public Error {
 public:
  StageError(const Error& cause, std::string stage)
      : Error(cause.kind(), stage + ": " + cause.what()), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct RefineSettings {
  MonetConfig monet;
  GeodesicConfig geodesic;
  GraphCutConfig graphcut;
  double zeta = 0.8;  // minimum confidence to keep a label
  double eta = 0.98;  // fraction of confident labels pruned away
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-request knobs; unset fields keep the session settings.
struct RefineOverrides {
  std::optional<double> tau;
  std::optional<int> epochs;
  std::optional<double> lambda;
  std::optional<double> sigma;
  std::optional<double> zeta;
  std::optional<double> eta;
};

struct RoundResult {
  int round = 0;
  StageTimes times;
  std::size_t changed_voxels = 0;
  std::size_t training_samples = 0;
  std::size_t scribble_voxels = 0;
};

/// One image being refined: the volume, the initial segmentation C with its
/// probability map P, the accumulated scribbles and the online model.
class Session {
 public:
  Session(Volume volume, LabelMap init_seg, ProbMap init_prob, RefineSettings settings,
          std::optional<MonetNet<float>> pretrained = std::nullopt);

  /// geodesic weights -> pruning -> samples -> online training -> inference
  /// -> GraphCut. Deterministic given the settings seed and round index.
  /// Throws StageError.
  RoundResult refine_round(const RefineOverrides& overrides = {});

  ScribbleSet& scribbles() { return scribbles_; }
  const ScribbleSet& scribbles() const { return scribbles_; }
  void add_scribbles(const ScribbleSet& s) { scribbles_.merge(s); }

  const Volume& volume() const { return volume_; }
  const Volume& normalized() const { return normalized_; }
  const LabelMap& init_seg() const { return init_seg_; }
  const ProbMap& init_prob() const { return init_prob_; }
  /// Latest GraphCut labels; the initial segmentation before any round.
  const LabelMap& result() const { return result_; }
  /// Latest network probabilities; P before any round.
  const ProbMap& probabilities() const { return prob_; }
  /// Latest geodesic weight map; all zeros before any round.
  const WeightMap& weights() const { return weights_; }
  const MonetNet<float>& model() const { return net_; }
  const RefineSettings& settings() const { return settings_; }
  int round() const { return round_; }

 private:
  Volume volume_;
  Volume normalized_;
  LabelMap init_seg_;
  ProbMap init_prob_;
  RefineSettings settings_;
  ScribbleSet scribbles_;
  LabelMap result_;
  ProbMap prob_;
  WeightMap weights_;
  MonetNet<float> net_;
  int round_ = 0;
};

/// Dice and ASSD of `pred` against `truth` (ASSD left empty when undefined).
EvalReport evaluate(const LabelMap& pred, const LabelMap& truth, const Spacing& spacing,
                    int round, std::size_t scribble_voxels);

}  // namespace monetseg
