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
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "monetseg/geodesic.hpp"
#include "monetseg/nn.hpp"
#include "monetseg/volume.hpp"

namespace monetseg {

struct MonetConfig {
  int patch_size = 9;
  std::vector<int> scales{1, 3, 5, 9};
  int filters_per_scale = 32;
  std::vector<int> fc_sizes{32, 16, 2};
  double dropout = 0.3;
  int online_epochs = 200;
  double online_lr = 1e-2;
  int pretrain_epochs = 50;
  double pretrain_lr = 1e-3;
  std::vector<int> pretrain_drops{35, 45};
  int pretrain_samples_per_class = 1024;
  /// Online training uses the whole sample set as one batch up to this size,
  /// otherwise minibatches of `minibatch_size`.
  int full_batch_limit = 1 << 14;
  int minibatch_size = 1 << 12;
  std::uint64_t seed = 0;

  void validate() const;
  int feature_width() const { return static_cast<int>(scales.size()) * filters_per_scale; }
  int max_scale() const;

  /// Single-scale ablation: one kernel of size patch_size with the same total
  /// filter count.
  static MonetConfig single_scale(const MonetConfig& base);
};

/// Flat "key = value" text, keys named after the fields above; '#' starts a
/// comment. Unknown keys are rejected.
MonetConfig parse_monet_config(std::string_view text, MonetConfig base = {});
std::string format_monet_config(const MonetConfig& cfg);

/// Network parameters and buffers. Layer order: one conv + batchnorm per
/// scale, then the fully-connected chain where every layer but the last is
/// followed by batchnorm, ReLU and dropout.
template <class T>
class MonetNet {
 public:
  MonetNet() = default;
  explicit MonetNet(const MonetConfig& cfg);

  void init(Rng& rng);
  const MonetConfig& config() const { return cfg_; }

  std::vector<ConvLayer<T>> convs;
  std::vector<BatchNormLayer<T>> conv_bns;
  std::vector<DenseLayer<T>> fcs;
  std::vector<BatchNormLayer<T>> fc_bns;
  bool trained = false;

  /// Learnable tensors in a fixed order (gradients use the same order).
  std::vector<Tensor<T>*> parameters();
  std::vector<const Tensor<T>*> parameters() const;
  /// Parameters followed by batchnorm running statistics.
  std::vector<const Tensor<T>*> state() const;
  std::vector<Tensor<T>*> state();

  template <class U>
  MonetNet<U> cast() const;

 private:
  MonetConfig cfg_;
};

/// Per-scale patch columns for a batch: cols[s] is [n, k_s^3] holding the
/// k_s^3 neighbourhood of each sample centre (zero outside the volume), in
/// the same column order as im2col_plane.
template <class T>
struct PatchBatch {
  std::vector<MatRM<T>> cols;
  std::size_t size() const { return cols.empty() ? 0 : static_cast<std::size_t>(cols[0].rows()); }
};

template <class T>
PatchBatch<T> extract_patch_columns(const Volume& v, std::span<const std::size_t> centers,
                                    const std::vector<int>& scales);
template <class T>
PatchBatch<T> gather_rows(const PatchBatch<T>& all, std::span<const std::size_t> rows);

template <class T>
struct MonetCache {
  std::vector<Tensor<T>> conv_pre;  // conv output before BN
  std::vector<BatchNormCache<T>> conv_bn;
  std::vector<Tensor<T>> conv_bn_out;  // BN output (ReLU input)
  std::vector<Tensor<T>> fc_in;
  std::vector<Tensor<T>> fc_pre;
  std::vector<BatchNormCache<T>> fc_bn;
  std::vector<Tensor<T>> fc_bn_out;
  std::vector<Tensor<T>> fc_mask;
  bool train = false;
};

/// Batched forward from patch columns; returns logits [n, 2]. Dropout masks
/// are drawn from `dropout_rng` in train mode (may be null when dropout is 0).
template <class T>
Tensor<T> monet_forward(MonetNet<T>& net, const PatchBatch<T>& batch, bool train,
                        Rng* dropout_rng, MonetCache<T>* cache);
/// Gradients of the logits' upstream loss w.r.t. parameters(), same order.
template <class T>
std::vector<Tensor<T>> monet_backward(const MonetNet<T>& net, const PatchBatch<T>& batch,
                                      const MonetCache<T>& cache,
                                      const Tensor<T>& grad_logits);

/// Logits (2) of the centre voxel of a single-channel K^3 patch.
template <class T>
std::array<T, 2> monet_forward_patch(MonetNet<T>& net, const Tensor<T>& patch, bool train);

/// Fully-convolutional eval-mode inference: foreground probability per voxel.
template <class T>
ProbMap monet_infer_volume(const MonetNet<T>& net, const Volume& v);
/// Same, returning raw logits [n_voxels, 2].
template <class T>
Tensor<T> monet_infer_logits(const MonetNet<T>& net, const Volume& v);

// ------------------------------------------------------------ training data

enum class SampleSource : std::uint8_t { kScribble, kSegmentation };

struct TrainingSample {
  std::size_t center = 0;
  std::uint8_t label = 0;
  SampleSource source = SampleSource::kSegmentation;
  double weight = 1.0;        // W_i (scribble) or 1 - W_i (segmentation)
  double class_weight = 1.0;  // alpha or beta of the sample's class
};

/// |T| / class count kept as an exact ratio; value() is the rounded quotient
/// the loss uses. Doubles alone cannot make weight * count == |T| hold for
/// every count.
struct ClassWeight {
  std::size_t num = 0;
  std::size_t den = 0;  // 0 when the class has no samples
  double value() const { return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0; }
};

struct BalanceWeights {
  ClassWeight alpha_f, alpha_b, beta_f, beta_b;
  std::size_t seg_f = 0, seg_b = 0, scr_f = 0, scr_b = 0;
  std::size_t total() const { return seg_f + seg_b + scr_f + scr_b; }
};

struct TrainingSet {
  std::vector<TrainingSample> samples;
  BalanceWeights balance;
};

/// Voxels i with conf(i) = max(p, 1 - p) >= zeta and U_i >= eta, U_i drawn
/// in index order from `rng`. Returned ascending.
std::vector<std::size_t> prune_labels(const LabelMap& c, const ProbMap& p, double zeta,
                                      double eta, Rng& rng);

/// One sample per scribble voxel and per kept segmentation voxel not
/// scribbled; class weights are |T| / class count. Throws kNothingToLearn
/// when both sets are empty.
TrainingSet build_training_set(const Volume& v, const LabelMap& c,
                               std::span<const std::size_t> kept, const ScribbleSet& s,
                               const WeightMap& w);

template <class T>
struct LossResult {
  double loss = 0;
  Tensor<T> grad_logits;
};

/// Mean over the batch of -weight * class_weight * log p(label).
template <class T>
LossResult<T> adaptive_loss(std::span<const TrainingSample> batch, const Tensor<T>& logits);

struct TrainResult {
  std::vector<double> loss_curve;  // per-epoch mean loss
};

/// Online SGD over `samples` with the cosine schedule; BN in train mode and
/// dropout on hidden fully-connected layers.
template <class T>
TrainResult train_online(MonetNet<T>& net, const Volume& v,
                         std::span<const TrainingSample> samples, const MonetConfig& cfg,
                         Rng& rng);

struct LabeledVolume {
  Volume volume;  // normalized
  LabelMap labels;
};

struct PretrainResult {
  std::vector<double> loss_curve;
  std::vector<std::string> warnings;
};

/// Class-balanced patch pre-training with the step schedule.
template <class T>
PretrainResult pretrain_offline(MonetNet<T>& net, std::span<const LabeledVolume> data,
                                const MonetConfig& cfg, Rng& rng);

// -------------------------------------------------------------- checkpoints
// "MONW" | u32 version | u32 patch | u32 n_scales | u32 scales[] |
// u32 filters | u32 n_fc | u32 fc[] | u32 trained |
// u32 n_tensors | n_tensors x (u32 count | f32 values[count]) | u32 crc32
// Integers and floats little endian; the CRC covers every preceding byte.

std::string encode_checkpoint(const MonetNet<float>& net);
MonetNet<float> decode_checkpoint(std::string_view bytes, const MonetConfig& base = {});
void save_checkpoint(const MonetNet<float>& net, const std::filesystem::path& path);
MonetNet<float> load_checkpoint(const std::filesystem::path& path,
                                const MonetConfig& base = {});

}  // namespace monetseg
