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
#include "monetseg/monet.hpp"
#include "monetseg/rng.hpp"

#include <cmath>
#include <filesystem>

using namespace monetseg;

namespace {

Volume random_volume(Dims d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(d.size());
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Volume(d, {}, std::move(v));
}

MonetConfig tiny_config() {
  MonetConfig cfg;
  cfg.patch_size = 5;
  cfg.scales = {1, 3, 5};
  cfg.filters_per_scale = 3;
  cfg.fc_sizes = {4, 3, 2};
  cfg.online_epochs = 5;
  return cfg;
}

template <class T>
void randomize_bn(MonetNet<T>& net, Rng& rng) {
  auto jitter = [&](BatchNormLayer<T>& bn) {
    for (std::size_t i = 0; i < bn.gamma.size(); ++i) {
      bn.gamma[i] = static_cast<T>(0.5 + rng.uniform());
      bn.beta[i] = static_cast<T>(rng.normal() * 0.2);
      bn.running_mean[i] = static_cast<T>(rng.normal() * 0.1);
      bn.running_var[i] = static_cast<T>(0.5 + rng.uniform());
    }
  };
  for (auto& bn : net.conv_bns) jitter(bn);
  for (auto& bn : net.fc_bns) jitter(bn);
}

template <class T>
Tensor<T> patch_at(const Volume& v, Coord c, int K) {
  const auto uk = static_cast<std::size_t>(K);
  Tensor<T> p({uk, uk, uk});
  const int r = K / 2;
  for (int z = 0; z < K; ++z)
    for (int y = 0; y < K; ++y)
      for (int x = 0; x < K; ++x)
        p[(static_cast<std::size_t>(z) * uk + static_cast<std::size_t>(y)) * uk + static_cast<std::size_t>(x)] =
            static_cast<T>(v.at(c.x + x - r, c.y + y - r, c.z + z - r));
  return p;
}

std::vector<double> flat_params(MonetNet<double>& net) {
  std::vector<double> out;
  for (auto* t : net.parameters()) out.insert(out.end(), t->span().begin(), t->span().end());
  return out;
}

}  // namespace

TEST_CASE("pruning boundary rules") {
  const Dims d{10, 10, 10};
  std::vector<float> probs(d.size());
  Rng r(1);
  for (auto& p : probs) p = static_cast<float>(r.uniform());
  const ProbMap p(d, probs);
  const LabelMap c = p.argmax();
  Rng a(3), b(3);
  CHECK(prune_labels(c, p, 0.0, 0.0, a).size() == d.size());
  CHECK(prune_labels(c, p, 0.8, 1.0, b).empty());
  Rng e(4);
  CHECK_THROWS_AS(prune_labels(c, p, 1.2, 0.5, e), Error);
}

TEST_CASE("pruning keeps confident background as well as foreground") {
  const ProbMap p({4, 1, 1}, std::vector<float>{0.05f, 0.5f, 0.95f, 0.79f});
  Rng rng(9);
  const auto kept = prune_labels(p.argmax(), p, 0.8, 0.0, rng);
  CHECK(kept == std::vector<std::size_t>{0, 2});
}

TEST_CASE("pruning keeps about 2% of confident voxels") {
  const Dims d{100, 100, 100};
  const ProbMap p(d, std::vector<float>(d.size(), 0.9f));
  Rng rng(2026);
  const double kept = static_cast<double>(prune_labels(p.argmax(), p, 0.8, 0.98, rng).size());
  const double sd = std::sqrt(1e6 * 0.02 * 0.98);
  CHECK(std::abs(kept - 20000.0) <= 4 * sd);
}

TEST_CASE("balance weights: worked example") {
  const Dims d{20, 10, 1};
  const Volume v(d, {}, std::vector<float>(d.size(), 0.0f));
  std::vector<std::uint8_t> lab(d.size(), 0);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < 90; ++i) {
    kept.push_back(i);
    lab[i] = i < 60 ? 1 : 0;
  }
  ScribbleSet s(d);
  for (std::size_t i = 100; i < 105; ++i) s.add(i, Label::kForeground);
  for (std::size_t i = 105; i < 110; ++i) s.add(i, Label::kBackground);
  const WeightMap w{d, std::vector<double>(d.size(), 0.25)};
  const auto ts = build_training_set(v, LabelMap(d, lab), kept, s, w);
  CHECK(ts.samples.size() == 100);
  CHECK(ts.balance.alpha_f.value() == 100.0 / 60);
  CHECK(ts.balance.alpha_b.value() == 100.0 / 30);
  CHECK(ts.balance.beta_f.value() == 20.0);
  CHECK(ts.balance.beta_b.value() == 20.0);
  for (const auto& smp : ts.samples) {
    if (smp.source == SampleSource::kSegmentation) CHECK(smp.weight == 0.75);
  }
}

TEST_CASE("a voxel both kept and scribbled yields one scribble sample") {
  const Dims d{4, 1, 1};
  const Volume v(d, {}, std::vector<float>(4, 0.0f));
  ScribbleSet s(d);
  s.add(1, Label::kBackground);
  const std::vector<std::size_t> kept{0, 1};
  const WeightMap w{d, {0.5, 1.0, 0.2, 0.0}};
  const auto ts = build_training_set(v, LabelMap(d, std::vector<std::uint8_t>{1, 1, 0, 0}), kept, s, w);
  REQUIRE(ts.samples.size() == 2);
  int at1 = 0;
  for (const auto& smp : ts.samples) {
    if (smp.center != 1) continue;
    ++at1;
    CHECK(smp.source == SampleSource::kScribble);
    CHECK(smp.label == 0);
    CHECK(smp.weight == 1.0);
  }
  CHECK(at1 == 1);
}

TEST_CASE("far segmentation voxels carry weight near one") {
  // Two flat regions separated by a large step: the far side is geodesically remote.
  const Dims d{8, 1, 1};
  std::vector<float> vals{0, 0, 0, 0, 5, 5, 5, 5};
  const Volume v(d, {}, vals);
  ScribbleSet s(d);
  s.add(0, Label::kBackground);
  const auto w = weights_from_distance(geodesic_distance(v, s, {}), 0.3);
  const std::vector<std::size_t> kept{7};
  const auto ts = build_training_set(v, LabelMap(d, std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1, 1, 1}), kept, s, w);
  for (const auto& smp : ts.samples) {
    if (smp.center == 7) CHECK(smp.weight == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("balance identity holds for random set sizes") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const Dims d{12, 12, 12};
    const Volume v(d, {}, std::vector<float>(d.size(), 0.0f));
    std::vector<std::uint8_t> lab(d.size());
    for (auto& l : lab) l = static_cast<std::uint8_t>(rng.below(2));
    std::vector<std::size_t> kept;
    ScribbleSet s(d);
    const double pk = rng.uniform(), ps = 0.2 * rng.uniform();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (rng.uniform() < pk) kept.push_back(i);
      if (rng.uniform() < ps) s.add(i, rng.below(2) ? Label::kForeground : Label::kBackground);
    }
    const WeightMap w{d, std::vector<double>(d.size(), 0.0)};
    const auto ts = build_training_set(v, LabelMap(d, lab), kept, s, w);
    const auto& b = ts.balance;
    const std::size_t t = b.total();
    CHECK(ts.samples.size() == t);
    // weight * class count == |T| in exact arithmetic, for every nonempty class
    auto identity = [t](const ClassWeight& w, std::size_t count) {
      return count == 0 ? w.den == 0 : w.num * count == t * w.den;
    };
    CHECK(identity(b.alpha_f, b.seg_f));
    CHECK(identity(b.alpha_b, b.seg_b));
    CHECK(identity(b.beta_f, b.scr_f));
    CHECK(identity(b.beta_b, b.scr_b));
    // counts recovered from the samples themselves, and each sample carries its class's value
    std::size_t seg_f = 0, seg_b = 0, scr_f = 0, scr_b = 0;
    for (const auto& smp : ts.samples) {
      const bool scr = smp.source == SampleSource::kScribble;
      const ClassWeight& w = scr ? (smp.label ? b.beta_f : b.beta_b) : (smp.label ? b.alpha_f : b.alpha_b);
      CHECK(smp.class_weight == w.value());
      ++(scr ? (smp.label ? scr_f : scr_b) : (smp.label ? seg_f : seg_b));
    }
    CHECK(seg_f == b.seg_f);
    CHECK(seg_b == b.seg_b);
    CHECK(scr_f == b.scr_f);
    CHECK(scr_b == b.scr_b);
  }
}

TEST_CASE("empty training set is nothing to learn") {
  const Dims d{3, 3, 3};
  const Volume v(d, {}, std::vector<float>(27, 0.0f));
  try {
    build_training_set(v, LabelMap(d, std::vector<std::uint8_t>(27, 0)), {}, ScribbleSet(d),
                       WeightMap{d, std::vector<double>(27, 0.0)});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNothingToLearn);
  }
}

TEST_CASE("adaptive loss: hand-computed two-sample batch") {
  const double l0 = std::log(0.8 / 0.2), l1 = std::log(0.4 / 0.6);
  Tensor<double> logits({2, 2});
  logits[1] = l0;
  logits[3] = l1;
  const std::vector<TrainingSample> batch{{0, 1, SampleSource::kScribble, 1.0, 2.0},
                                          {1, 0, SampleSource::kSegmentation, 0.5, 3.0}};
  const auto r = adaptive_loss<double>(batch, logits);
  CHECK(r.loss == doctest::Approx(-(2 * std::log(0.8) + 0.5 * 3 * std::log(0.6)) / 2).epsilon(1e-12));
}

TEST_CASE("adaptive loss: zero coefficient ignores the prediction") {
  Tensor<double> a({1, 2}), b({1, 2});
  a[0] = 4.0;
  b[1] = 4.0;
  const std::vector<TrainingSample> seg{{0, 1, SampleSource::kSegmentation, 0.0, 5.0}};
  CHECK(adaptive_loss<double>(seg, a).loss == 0.0);
  CHECK(adaptive_loss<double>(seg, b).loss == 0.0);
  std::vector<TrainingSample> flipped = seg;
  flipped[0].label = 0;
  CHECK(adaptive_loss<double>(flipped, a).loss == 0.0);

  Tensor<double> sure({1, 2});
  sure[1] = 60.0;
  const std::vector<TrainingSample> scr{{0, 1, SampleSource::kScribble, 1.0, 1.0}};
  CHECK(adaptive_loss<double>(scr, sure).loss == doctest::Approx(0.0));
  Tensor<double> bad({1, 2});
  bad[0] = std::nan("");
  CHECK_THROWS_AS(adaptive_loss<double>(scr, bad), Error);
}

TEST_CASE("adaptive loss gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const std::size_t n = 6;
    Tensor<double> logits({n, 2});
    for (auto& x : logits.span()) x = rng.normal() * 2;
    std::vector<TrainingSample> batch;
    for (std::size_t i = 0; i < n; ++i) {
      batch.push_back({i, static_cast<std::uint8_t>(rng.below(2)),
                       rng.below(2) ? SampleSource::kScribble : SampleSource::kSegmentation, rng.uniform(),
                       0.5 + 3 * rng.uniform()});
    }
    const auto r = adaptive_loss<double>(batch, logits);
    const auto gc = testing::check_gradient(logits.span(), r.grad_logits.span(),
                                            [&] { return adaptive_loss<double>(batch, logits).loss; });
    CHECK(gc.max_rel_error < 1e-4);
  }
}

TEST_CASE("zero network gives even odds") {
  MonetNet<double> net{MonetConfig{}};
  const auto logits = monet_forward_patch(net, Tensor<double>({9, 9, 9}, 0.7), false);
  CHECK(logits.size() == 2);
  CHECK(logits[0] == 0.0);
  CHECK(logits[1] == 0.0);
  const Volume v({6, 5, 4}, {}, std::vector<float>(120, 0.3f));
  const auto p = monet_infer_volume(net, v);
  CHECK(p.dims == v.dims());
  for (float x : p.prob) CHECK(x == 0.5f);
  CHECK_THROWS_AS(monet_forward_patch(net, Tensor<double>({5, 5, 5}), false), Error);
}

TEST_CASE("patch and fully-convolutional paths agree at interior voxels") {
  const Volume v = random_volume({16, 16, 16}, 5);
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    MonetConfig cfg;
    cfg.seed = seed;
    MonetNet<float> net(cfg);
    Rng rng(seed);
    net.init(rng);
    randomize_bn(net, rng);
    const auto logits = monet_infer_logits(net, v);
    double worst = 0;
    for (int z = 4; z < 12; ++z)
      for (int y = 4; y < 12; ++y)
        for (int x = 4; x < 12; ++x) {
          const auto pl = monet_forward_patch(net, patch_at<float>(v, {x, y, z}, 9), false);
          const std::size_t i = linear_index({x, y, z}, v.dims());
          worst = std::max({worst, std::abs(double(pl[0]) - double(logits[2 * i])),
                            std::abs(double(pl[1]) - double(logits[2 * i + 1]))});
        }
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("full network gradient matches finite differences") {
  const Volume v = random_volume({7, 7, 7}, 21);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MonetConfig cfg = tiny_config();
    MonetNet<double> net(cfg);
    Rng rng(seed);
    net.init(rng);
    std::vector<std::size_t> centers;
    std::vector<TrainingSample> samples;
    for (int i = 0; i < 8; ++i) {
      const std::size_t c = rng.below(v.size());
      centers.push_back(c);
      samples.push_back({c, static_cast<std::uint8_t>(i % 2), i < 3 ? SampleSource::kScribble : SampleSource::kSegmentation,
                         i < 3 ? 1.0 : rng.uniform(), 0.5 + rng.uniform()});
    }
    const auto batch = extract_patch_columns<double>(v, centers, cfg.scales);
    const Rng dropout_seed = rng.fork(99);
    MonetCache<double> cache;
    auto run = [&](MonetCache<double>* c) {
      Rng d = dropout_seed;
      const auto logits = monet_forward(net, batch, true, &d, c);
      return adaptive_loss<double>(samples, logits);
    };
    const auto base = run(&cache);
    const auto grads = monet_backward(net, batch, cache, base.grad_logits);
    auto pattern = [&] {
      MonetCache<double> c;
      run(&c);
      std::vector<std::uint8_t> bits;
      for (const auto& t : c.conv_bn_out)
        for (double x : t.span()) bits.push_back(x > 0);
      for (const auto& t : c.fc_bn_out)
        for (double x : t.span()) bits.push_back(x > 0);
      return bits;
    };
    const auto params = net.parameters();
    REQUIRE(grads.size() == params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto gc = testing::check_gradient(params[k]->span(), grads[k].span(),
                                              [&] { return run(nullptr).loss; }, 1e-5, pattern);
      CHECK(gc.checked > 0);
      CHECK(gc.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("online training: learns a separable toy set deterministically") {
  Dims d{12, 12, 12};
  std::vector<float> vals(d.size());
  std::vector<std::uint8_t> lab(d.size());
  Rng noise(4);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Coord c = coord_of(i, d);
    lab[i] = c.x >= 6;
    vals[i] = static_cast<float>((lab[i] ? 0.8 : 0.2) + 0.05 * noise.normal());
  }
  const Volume v = normalize_volume(Volume(d, {}, vals));
  std::vector<TrainingSample> samples;
  for (std::size_t i = 0; i < d.size(); i += 7) samples.push_back({i, lab[i], SampleSource::kSegmentation, 1.0, 1.0});
  MonetConfig cfg = tiny_config();
  cfg.online_epochs = 30;
  auto train = [&] {
    MonetNet<float> net(cfg);
    Rng init(1);
    net.init(init);
    Rng rng(2);
    auto r = train_online(net, v, samples, cfg, rng);
    return std::make_pair(r, net);
  };
  const auto [r1, n1] = train();
  const auto [r2, n2] = train();
  CHECK(r1.loss_curve.size() == 30);
  CHECK(r1.loss_curve.back() < r1.loss_curve.front());
  CHECK(r1.loss_curve == r2.loss_curve);
  CHECK(encode_checkpoint(n1) == encode_checkpoint(n2));
  CHECK(n1.trained);
}

TEST_CASE("online training with zero sample weights leaves parameters unchanged") {
  const Volume v = random_volume({8, 8, 8}, 3);
  std::vector<TrainingSample> samples;
  for (std::size_t i = 0; i < 40; ++i) samples.push_back({i * 11, static_cast<std::uint8_t>(i % 2), SampleSource::kSegmentation, 0.0, 2.0});
  const MonetConfig cfg = tiny_config();
  MonetNet<double> net(cfg);
  Rng init(8);
  net.init(init);
  const auto before = flat_params(net);
  Rng rng(9);
  train_online(net, v, samples, cfg, rng);
  CHECK(flat_params(net) == before);
}

TEST_CASE("checkpoint round-trip preserves inference") {
  MonetConfig cfg = tiny_config();
  MonetNet<float> net(cfg);
  Rng rng(12);
  net.init(rng);
  randomize_bn(net, rng);
  net.trained = true;
  const std::string bytes = encode_checkpoint(net);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.config().scales == cfg.scales);
  CHECK(back.trained);
  CHECK(encode_checkpoint(back) == bytes);
  const Volume v = random_volume({6, 6, 6}, 2);
  CHECK(monet_infer_volume(back, v).prob == monet_infer_volume(net, v).prob);

  std::string corrupt = bytes;
  corrupt[corrupt.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(decode_checkpoint(corrupt), Error);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);

  const auto path = std::filesystem::temp_directory_path() / "monetseg_test_ckpt.monw";
  save_checkpoint(net, path);
  CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("pre-training with zero epochs changes nothing") {
  MonetConfig cfg = tiny_config();
  cfg.pretrain_epochs = 0;
  MonetNet<float> net(cfg);
  Rng rng(1);
  net.init(rng);
  const std::string before = encode_checkpoint(net);
  const Dims d{8, 8, 8};
  std::vector<std::uint8_t> lab(d.size(), 0);
  lab[100] = 1;
  const std::vector<LabeledVolume> data{{random_volume(d, 1), LabelMap(d, lab)}};
  pretrain_offline(net, data, cfg, rng);
  CHECK(encode_checkpoint(net) == before);
}

TEST_CASE("pre-training skips single-class volumes with a warning") {
  MonetConfig cfg = tiny_config();
  cfg.pretrain_epochs = 2;
  cfg.pretrain_samples_per_class = 16;
  MonetNet<float> net(cfg);
  Rng rng(1);
  net.init(rng);
  const Dims d{8, 8, 8};
  std::vector<std::uint8_t> two(d.size(), 0);
  for (std::size_t i = 0; i < 100; ++i) two[i] = 1;
  const std::vector<LabeledVolume> data{{random_volume(d, 1), LabelMap(d, std::vector<std::uint8_t>(d.size(), 0))},
                                        {random_volume(d, 2), LabelMap(d, two)}};
  const auto r = pretrain_offline(net, data, cfg, rng);
  CHECK(r.warnings.size() == 1);
  CHECK(r.loss_curve.size() == 2);
  CHECK(net.trained);
}

TEST_CASE("config parsing and the single-scale variant") {
  const auto cfg = parse_monet_config("# tiny\npatch_size = 5\nscales = 1,5\nfilters_per_scale = 4\n");
  CHECK(cfg.patch_size == 5);
  CHECK(cfg.scales == std::vector<int>{1, 5});
  CHECK(parse_monet_config(format_monet_config(cfg)).scales == cfg.scales);
  CHECK_THROWS_AS(parse_monet_config("bogus = 1\n"), Error);
  CHECK_THROWS_AS(parse_monet_config("scales = 2,4\n"), Error);
  CHECK_THROWS_AS(parse_monet_config("fc_sizes = 8,3\n"), Error);

  const auto ss = MonetConfig::single_scale(MonetConfig{});
  CHECK(ss.scales == std::vector<int>{9});
  CHECK(ss.filters_per_scale == 128);
  CHECK(ss.feature_width() == MonetConfig{}.feature_width());

  MonetConfig small = MonetConfig::single_scale(tiny_config());
  small.online_epochs = 3;
  MonetNet<float> net(small);
  Rng rng(5);
  net.init(rng);
  const Volume v = random_volume({8, 8, 8}, 6);
  std::vector<TrainingSample> samples;
  for (std::size_t i = 0; i < 30; ++i) samples.push_back({i * 13, static_cast<std::uint8_t>(i % 2), SampleSource::kScribble, 1.0, 1.0});
  const auto r = train_online(net, v, samples, small, rng);
  CHECK(r.loss_curve.size() == 3);
  CHECK(monet_infer_volume(net, v).dims == v.dims());
}
