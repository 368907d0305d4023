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

#include "monetseg/session.hpp"

#include <chrono>

#include "monetseg/error.hpp"
#include "monetseg/rng.hpp"

namespace monetseg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <class F>
auto staged(const char* stage, double& seconds, F&& f) {
  const auto t0 = Clock::now();
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      seconds = seconds_since(t0);
    } else {
      auto r = f();
      seconds = seconds_since(t0);
      return r;
    }
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(e, stage);
  }
}

}  // namespace

void RefineSettings::validate() const {
  monet.validate();
  geodesic.validate();
  graphcut.validate();
  if (!(zeta >= 0.5 && zeta <= 1)) throw Error(ErrorKind::kConfig, "zeta must be in [0.5, 1]");
  if (!(eta >= 0 && eta <= 1)) throw Error(ErrorKind::kConfig, "eta must be in [0, 1]");
}

Session::Session(Volume volume, LabelMap init_seg, ProbMap init_prob, RefineSettings settings,
                 std::optional<MonetNet<float>> pretrained)
    : volume_(std::move(volume)),
      init_seg_(std::move(init_seg)),
      init_prob_(std::move(init_prob)),
      settings_(std::move(settings)) {
  settings_.validate();
  require_same_dims(volume_.dims(), init_seg_.dims, "initial segmentation");
  require_same_dims(volume_.dims(), init_prob_.dims, "initial probabilities");
  normalized_ = normalize_volume(volume_);
  scribbles_ = ScribbleSet(volume_.dims());
  result_ = init_seg_;
  prob_ = init_prob_;
  weights_ = WeightMap{volume_.dims(), std::vector<double>(volume_.size(), 0.0)};
  if (pretrained) {
    const MonetConfig& a = pretrained->config();
    const MonetConfig& b = settings_.monet;
    if (a.patch_size != b.patch_size || a.scales != b.scales ||
        a.filters_per_scale != b.filters_per_scale || a.fc_sizes != b.fc_sizes) {
      throw Error(ErrorKind::kValidation, "checkpoint architecture differs from the session model");
    }
    net_ = std::move(*pretrained);
  } else {
    net_ = MonetNet<float>(settings_.monet);
    Rng init_rng = Rng(settings_.seed).fork(0x1417);
    net_.init(init_rng);
  }
}

RoundResult Session::refine_round(const RefineOverrides& o) {
  RefineSettings s = settings_;
  if (o.tau) s.geodesic.tau = *o.tau;
  if (o.epochs) s.monet.online_epochs = *o.epochs;
  if (o.lambda) s.graphcut.lambda = *o.lambda;
  if (o.sigma) s.graphcut.sigma = *o.sigma;
  if (o.zeta) s.zeta = *o.zeta;
  if (o.eta) s.eta = *o.eta;
  try {
    s.validate();
  } catch (const Error& e) {
    throw StageError(e, "config");
  }

  const int round = round_ + 1;
  Rng round_rng = Rng(s.seed).fork(static_cast<std::uint64_t>(round));
  RoundResult out;
  out.round = round;
  out.scribble_voxels = scribbles_.size();
  double unused = 0;

  WeightMap w = staged("weights", out.times.weights, [&] {
    if (scribbles_.empty()) {
      return WeightMap{volume_.dims(), std::vector<double>(volume_.size(), 0.0)};
    }
    return weights_from_distance(geodesic_distance(normalized_, scribbles_, s.geodesic),
                                 s.geodesic.tau);
  });
  const auto kept = staged("prune", unused, [&] {
    Rng prune_rng = round_rng.fork(1);
    return prune_labels(init_seg_, init_prob_, s.zeta, s.eta, prune_rng);
  });
  const TrainingSet set = staged("samples", unused, [&] {
    return build_training_set(normalized_, init_seg_, kept, scribbles_, w);
  });
  out.training_samples = set.samples.size();

  // Train a copy so a failed round leaves the session model untouched.
  MonetNet<float> net = net_;
  staged("train", out.times.train, [&] {
    Rng train_rng = round_rng.fork(2);
    train_online(net, normalized_, std::span<const TrainingSample>(set.samples), s.monet,
                 train_rng);
  });
  ProbMap prob = staged("infer", out.times.infer, [&] { return monet_infer_volume(net, normalized_); });
  LabelMap labels = staged("graphcut", out.times.graphcut, [&] {
    return graphcut_refine(prob, normalized_, scribbles_, s.graphcut);
  });

  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    out.changed_voxels += labels.labels[i] != result_.labels[i];
  }
  net_ = std::move(net);
  prob_ = std::move(prob);
  result_ = std::move(labels);
  weights_ = std::move(w);
  round_ = round;
  return out;
}

EvalReport evaluate(const LabelMap& pred, const LabelMap& truth, const Spacing& spacing,
                    int round, std::size_t scribble_voxels) {
  EvalReport r;
  r.round = round;
  r.scribble_voxels = scribble_voxels;
  r.dice = dice(pred, truth);
  try {
    r.assd = assd(pred, truth, spacing);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kUndefinedMetric) throw;
  }
  return r;
}

}  // namespace monetseg
