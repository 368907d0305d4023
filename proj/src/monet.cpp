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

#include "monetseg/monet.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "monetseg/error.hpp"
#include "monetseg/io.hpp"

namespace monetseg {

// ------------------------------------------------------------------ config

void MonetConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kConfig, "monet config: " + m); };
  if (patch_size < 1 || patch_size % 2 == 0) fail("patch_size must be odd and positive");
  if (scales.empty()) fail("scales must not be empty");
  for (int k : scales) {
    if (k < 1 || k % 2 == 0 || k > patch_size) fail("scales must be odd and <= patch_size");
  }
  if (filters_per_scale < 1) fail("filters_per_scale must be positive");
  if (fc_sizes.empty() || fc_sizes.back() != 2) fail("fc_sizes must end in 2");
  for (int f : fc_sizes) {
    if (f < 1) fail("fc_sizes must be positive");
  }
  if (!(dropout >= 0 && dropout < 1)) fail("dropout must lie in [0, 1)");
  if (online_epochs < 0 || pretrain_epochs < 0) fail("epochs must be non-negative");
  if (!(online_lr > 0) || !(pretrain_lr > 0)) fail("learning rates must be positive");
  if (pretrain_samples_per_class < 1) fail("pretrain_samples_per_class must be positive");
  if (full_batch_limit < 1 || minibatch_size < 1) fail("batch sizes must be positive");
}

int MonetConfig::max_scale() const { return *std::max_element(scales.begin(), scales.end()); }

MonetConfig MonetConfig::single_scale(const MonetConfig& base) {
  MonetConfig c = base;
  c.filters_per_scale = base.feature_width();
  c.scales = {base.patch_size};
  return c;
}

namespace {

std::vector<int> parse_int_list(const std::string& v) {
  std::string tmp = v;
  for (char& ch : tmp) {
    if (ch == ',' || ch == '[' || ch == ']') ch = ' ';
  }
  std::istringstream is(tmp);
  std::vector<int> out;
  int x;
  while (is >> x) out.push_back(x);
  if (!is.eof()) throw Error(ErrorKind::kConfig, "bad integer list '" + v + "'");
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

MonetConfig parse_monet_config(std::string_view text, MonetConfig cfg) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (strip(line).empty()) continue;
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kConfig, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = strip(line.substr(0, eq));
    const std::string val = strip(line.substr(eq + 1));
    try {
      if (key == "patch_size") cfg.patch_size = std::stoi(val);
      else if (key == "scales") cfg.scales = parse_int_list(val);
      else if (key == "filters_per_scale") cfg.filters_per_scale = std::stoi(val);
      else if (key == "fc_sizes") cfg.fc_sizes = parse_int_list(val);
      else if (key == "dropout") cfg.dropout = std::stod(val);
      else if (key == "online_epochs") cfg.online_epochs = std::stoi(val);
      else if (key == "online_lr") cfg.online_lr = std::stod(val);
      else if (key == "pretrain_epochs") cfg.pretrain_epochs = std::stoi(val);
      else if (key == "pretrain_lr") cfg.pretrain_lr = std::stod(val);
      else if (key == "pretrain_drops") cfg.pretrain_drops = parse_int_list(val);
      else if (key == "pretrain_samples_per_class") cfg.pretrain_samples_per_class = std::stoi(val);
      else if (key == "full_batch_limit") cfg.full_batch_limit = std::stoi(val);
      else if (key == "minibatch_size") cfg.minibatch_size = std::stoi(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else throw Error(ErrorKind::kConfig, "config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::kConfig, "config line " + std::to_string(line_no) + ": bad value for '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

std::string format_monet_config(const MonetConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "patch_size = " << c.patch_size << "\n"
     << "scales = " << join(c.scales) << "\n"
     << "filters_per_scale = " << c.filters_per_scale << "\n"
     << "fc_sizes = " << join(c.fc_sizes) << "\n"
     << "dropout = " << c.dropout << "\n"
     << "online_epochs = " << c.online_epochs << "\n"
     << "online_lr = " << c.online_lr << "\n"
     << "pretrain_epochs = " << c.pretrain_epochs << "\n"
     << "pretrain_lr = " << c.pretrain_lr << "\n"
     << "pretrain_drops = " << join(c.pretrain_drops) << "\n"
     << "pretrain_samples_per_class = " << c.pretrain_samples_per_class << "\n"
     << "full_batch_limit = " << c.full_batch_limit << "\n"
     << "minibatch_size = " << c.minibatch_size << "\n"
     << "seed = " << c.seed << "\n";
  return os.str();
}

// ----------------------------------------------------------------- network

template <class T>
MonetNet<T>::MonetNet(const MonetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  for (int k : cfg_.scales) {
    convs.emplace_back(k, 1, cfg_.filters_per_scale, Padding::kValid);
    conv_bns.emplace_back(cfg_.filters_per_scale);
  }
  int in = cfg_.feature_width();
  for (std::size_t l = 0; l < cfg_.fc_sizes.size(); ++l) {
    fcs.emplace_back(in, cfg_.fc_sizes[l]);
    if (l + 1 < cfg_.fc_sizes.size()) fc_bns.emplace_back(cfg_.fc_sizes[l]);
    in = cfg_.fc_sizes[l];
  }
}

template <class T>
void MonetNet<T>::init(Rng& rng) {
  for (auto& c : convs) c.init(rng);
  for (auto& f : fcs) f.init(rng);
  for (auto& bn : conv_bns) bn = BatchNormLayer<T>(bn.channels);
  for (auto& bn : fc_bns) bn = BatchNormLayer<T>(bn.channels);
  trained = false;
}

template <class T>
std::vector<Tensor<T>*> MonetNet<T>::parameters() {
  std::vector<Tensor<T>*> p;
  for (std::size_t s = 0; s < convs.size(); ++s) {
    p.insert(p.end(), {&convs[s].weight, &convs[s].bias, &conv_bns[s].gamma, &conv_bns[s].beta});
  }
  for (std::size_t l = 0; l < fcs.size(); ++l) {
    p.insert(p.end(), {&fcs[l].weight, &fcs[l].bias});
    if (l < fc_bns.size()) p.insert(p.end(), {&fc_bns[l].gamma, &fc_bns[l].beta});
  }
  return p;
}

template <class T>
std::vector<const Tensor<T>*> MonetNet<T>::parameters() const {
  auto p = const_cast<MonetNet*>(this)->parameters();
  return {p.begin(), p.end()};
}

template <class T>
std::vector<Tensor<T>*> MonetNet<T>::state() {
  auto p = parameters();
  for (auto& bn : conv_bns) p.insert(p.end(), {&bn.running_mean, &bn.running_var});
  for (auto& bn : fc_bns) p.insert(p.end(), {&bn.running_mean, &bn.running_var});
  return p;
}

template <class T>
std::vector<const Tensor<T>*> MonetNet<T>::state() const {
  auto p = const_cast<MonetNet*>(this)->state();
  return {p.begin(), p.end()};
}

template <class T>
template <class U>
MonetNet<U> MonetNet<T>::cast() const {
  MonetNet<U> out(cfg_);
  auto src = state();
  auto dst = out.state();
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (std::size_t j = 0; j < src[i]->size(); ++j) (*dst[i])[j] = static_cast<U>((*src[i])[j]);
  }
  out.trained = trained;
  return out;
}

// ------------------------------------------------------------ patch columns

template <class T>
PatchBatch<T> extract_patch_columns(const Volume& v, std::span<const std::size_t> centers,
                                    const std::vector<int>& scales) {
  PatchBatch<T> batch;
  const Dims& d = v.dims();
  const auto data = v.data();
  const auto n = static_cast<Eigen::Index>(centers.size());
  for (int k : scales) {
    const int pad = (k - 1) / 2;
    MatRM<T> cols(n, static_cast<Eigen::Index>(k) * k * k);
    for (Eigen::Index r = 0; r < n; ++r) {
      const Coord c = coord_of(centers[static_cast<std::size_t>(r)], d);
      T* row = cols.data() + r * cols.cols();
      for (int kz = 0; kz < k; ++kz) {
        const int z = c.z + kz - pad;
        for (int ky = 0; ky < k; ++ky) {
          const int y = c.y + ky - pad;
          for (int kx = 0; kx < k; ++kx) {
            const int x = c.x + kx - pad;
            *row++ = d.contains(x, y, z) ? static_cast<T>(data[linear_index_unchecked(x, y, z, d)])
                                         : T(0);
          }
        }
      }
    }
    batch.cols.push_back(std::move(cols));
  }
  return batch;
}

template <class T>
PatchBatch<T> gather_rows(const PatchBatch<T>& all, std::span<const std::size_t> rows) {
  PatchBatch<T> out;
  for (const auto& m : all.cols) {
    MatRM<T> g(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      g.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
    }
    out.cols.push_back(std::move(g));
  }
  return out;
}

// ------------------------------------------------------------ forward/back

template <class T>
Tensor<T> monet_forward(MonetNet<T>& net, const PatchBatch<T>& batch, bool train,
                        Rng* dropout_rng, MonetCache<T>* cache) {
  const auto& cfg = net.config();
  if (batch.cols.size() != net.convs.size()) {
    throw Error(ErrorKind::kDimsMismatch, "patch batch does not match network scales");
  }
  const std::size_t n = batch.size();
  const int F = cfg.filters_per_scale;
  MonetCache<T> local;
  MonetCache<T>& c = cache ? *cache : local;
  c = MonetCache<T>{};
  c.train = train;
  Tensor<T> features({n, static_cast<std::size_t>(cfg.feature_width())});
  auto feat = as_matrix(features);
  for (std::size_t s = 0; s < net.convs.size(); ++s) {
    const auto& conv = net.convs[s];
    if (batch.cols[s].cols() != static_cast<Eigen::Index>(conv.fan_in())) {
      throw Error(ErrorKind::kDimsMismatch, "patch columns do not match kernel size");
    }
    Tensor<T> pre({n, static_cast<std::size_t>(F)});
    auto pm = as_matrix(pre);
    pm.noalias() = batch.cols[s] * as_matrix(conv.weight).transpose();
    pm.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(conv.bias.data(), F);
    BatchNormCache<T> bnc;
    Tensor<T> bn_out = batchnorm_forward(pre, net.conv_bns[s], train, &bnc);
    auto bo = as_matrix(bn_out);
    feat.middleCols(static_cast<Eigen::Index>(s) * F, F) = bo.cwiseMax(T(0));
    c.conv_pre.push_back(std::move(pre));
    c.conv_bn.push_back(std::move(bnc));
    c.conv_bn_out.push_back(std::move(bn_out));
  }
  Tensor<T> x = std::move(features);
  const std::size_t L = net.fcs.size();
  for (std::size_t l = 0; l < L; ++l) {
    Tensor<T> pre = dense_forward(x, net.fcs[l]);
    c.fc_in.push_back(std::move(x));
    if (l + 1 == L) {
      c.fc_pre.push_back(pre);
      return pre;
    }
    BatchNormCache<T> bnc;
    Tensor<T> bn_out = batchnorm_forward(pre, net.fc_bns[l], train, &bnc);
    Tensor<T> act = relu_forward(bn_out);
    Tensor<T> mask;
    if (train && cfg.dropout > 0) {
      if (!dropout_rng) throw Error(ErrorKind::kConfig, "dropout requires an rng");
      mask = dropout_mask<T>(act.shape(), cfg.dropout, *dropout_rng);
      for (std::size_t i = 0; i < act.size(); ++i) act[i] *= mask[i];
    }
    c.fc_pre.push_back(std::move(pre));
    c.fc_bn.push_back(std::move(bnc));
    c.fc_bn_out.push_back(std::move(bn_out));
    c.fc_mask.push_back(std::move(mask));
    x = std::move(act);
  }
  return x;
}

template <class T>
std::vector<Tensor<T>> monet_backward(const MonetNet<T>& net, const PatchBatch<T>& batch,
                                      const MonetCache<T>& c, const Tensor<T>& grad_logits) {
  if (!c.train) throw Error(ErrorKind::kConfig, "backward requires a train-mode forward");
  const auto& cfg = net.config();
  const int F = cfg.filters_per_scale;
  const std::size_t L = net.fcs.size();
  std::vector<Tensor<T>> fc_grads;  // collected back-to-front, reordered below
  std::vector<std::vector<Tensor<T>>> per_layer(L);
  Tensor<T> d = grad_logits;
  for (std::size_t li = L; li-- > 0;) {
    if (li + 1 < L) {
      if (c.fc_mask[li].size()) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= c.fc_mask[li][i];
      }
      d = relu_backward(c.fc_bn_out[li], d);
      auto bg = batchnorm_backward(net.fc_bns[li], c.fc_bn[li], d);
      d = std::move(bg.grad_x);
      per_layer[li].push_back(std::move(bg.grad_gamma));
      per_layer[li].push_back(std::move(bg.grad_beta));
    }
    auto dg = dense_backward(c.fc_in[li], net.fcs[li], d);
    d = std::move(dg.grad_x);
    per_layer[li].insert(per_layer[li].begin(), {std::move(dg.grad_w), std::move(dg.grad_b)});
  }
  std::vector<Tensor<T>> grads;
  const auto dfeat = as_matrix(d);
  const std::size_t n = batch.size();
  for (std::size_t s = 0; s < net.convs.size(); ++s) {
    Tensor<T> ds({n, static_cast<std::size_t>(F)});
    as_matrix(ds) = dfeat.middleCols(static_cast<Eigen::Index>(s) * F, F);
    ds = relu_backward(c.conv_bn_out[s], ds);
    auto bg = batchnorm_backward(net.conv_bns[s], c.conv_bn[s], ds);
    Tensor<T> gw(net.convs[s].weight.shape());
    Tensor<T> gb(net.convs[s].bias.shape());
    auto dpre = as_matrix(bg.grad_x);
    MatMap<T>(gw.data(), F, batch.cols[s].cols()).noalias() = dpre.transpose() * batch.cols[s];
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data(), F) = dpre.colwise().sum();
    grads.push_back(std::move(gw));
    grads.push_back(std::move(gb));
    grads.push_back(std::move(bg.grad_gamma));
    grads.push_back(std::move(bg.grad_beta));
  }
  for (auto& layer : per_layer) {
    for (auto& g : layer) grads.push_back(std::move(g));
  }
  return grads;
}

template <class T>
std::array<T, 2> monet_forward_patch(MonetNet<T>& net, const Tensor<T>& patch, bool train) {
  const int K = net.config().patch_size;
  const auto uk = static_cast<std::size_t>(K);
  if (patch.size() != uk * uk * uk) {
    throw Error(ErrorKind::kDimsMismatch, "patch must be " + std::to_string(K) + "^3");
  }
  PatchBatch<T> batch;
  for (int k : net.config().scales) {
    const int off = (K - k) / 2;
    MatRM<T> cols(1, static_cast<Eigen::Index>(k) * k * k);
    T* row = cols.data();
    for (int kz = 0; kz < k; ++kz) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          *row++ = patch[(static_cast<std::size_t>(off + kz) * uk + off + ky) * uk + off + kx];
        }
      }
    }
    batch.cols.push_back(std::move(cols));
  }
  Rng rng(net.config().seed);
  const auto logits = monet_forward<T>(net, batch, train, &rng, nullptr);
  return {logits[0], logits[1]};
}

template <class T>
Tensor<T> monet_infer_logits(const MonetNet<T>& net, const Volume& v) {
  const auto& cfg = net.config();
  const Dims& d = v.dims();
  const int F = cfg.filters_per_scale;
  const Eigen::Index plane = static_cast<Eigen::Index>(d.nx) * d.ny;
  std::vector<T> data(v.data().begin(), v.data().end());
  Tensor<T> logits({v.size(), 2});
  MatRM<T> cols, res, feat(plane, cfg.feature_width()), x, y;
  for (int z = 0; z < d.nz; ++z) {
    for (std::size_t s = 0; s < net.convs.size(); ++s) {
      const auto& conv = net.convs[s];
      im2col_plane(data.data(), 1, d.nz, d.ny, d.nx, conv.kernel, (conv.kernel - 1) / 2, z,
                   d.ny, d.nx, cols);
      res.noalias() = cols * as_matrix(conv.weight).transpose();
      res.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(conv.bias.data(), F);
      batchnorm_apply_eval(net.conv_bns[s], res);
      feat.middleCols(static_cast<Eigen::Index>(s) * F, F) = res.cwiseMax(T(0));
    }
    x = feat;
    for (std::size_t l = 0; l < net.fcs.size(); ++l) {
      const auto& fc = net.fcs[l];
      y.noalias() = x * as_matrix(fc.weight).transpose();
      y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(fc.bias.data(),
                                                                         fc.out_features);
      if (l < net.fc_bns.size()) {
        batchnorm_apply_eval(net.fc_bns[l], y);
        y = y.cwiseMax(T(0));
      }
      x.swap(y);
    }
    std::copy(x.data(), x.data() + plane * 2, logits.data() + static_cast<std::size_t>(z) * plane * 2);
  }
  return logits;
}

template <class T>
ProbMap monet_infer_volume(const MonetNet<T>& net, const Volume& v) {
  const Tensor<T> logits = monet_infer_logits(net, v);
  std::vector<float> prob(v.size());
  for (std::size_t i = 0; i < prob.size(); ++i) {
    // softmax over two classes = logistic of the logit difference
    const double diff = static_cast<double>(logits[2 * i + 1]) - static_cast<double>(logits[2 * i]);
    const double p = diff >= 0 ? 1.0 / (1.0 + std::exp(-diff))
                               : std::exp(diff) / (1.0 + std::exp(diff));
    prob[i] = static_cast<float>(p);
  }
  return ProbMap(v.dims(), std::move(prob));
}

// ---------------------------------------------------------------- pruning

std::vector<std::size_t> prune_labels(const LabelMap& c, const ProbMap& p, double zeta,
                                      double eta, Rng& rng) {
  if (!(zeta >= 0 && zeta <= 1) || !(eta >= 0 && eta <= 1)) {
    throw Error(ErrorKind::kConfig, "pruning parameters zeta and eta must lie in [0, 1]");
  }
  require_same_dims(c.dims, p.dims, "prune_labels");
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < p.prob.size(); ++i) {
    const double u = rng.uniform();
    const double pi = p.prob[i];
    const double conf = std::max(pi, 1.0 - pi);
    if (conf >= zeta && u >= eta) kept.push_back(i);
  }
  return kept;
}

TrainingSet build_training_set(const Volume& v, const LabelMap& c,
                               std::span<const std::size_t> kept, const ScribbleSet& s,
                               const WeightMap& w) {
  require_same_dims(v.dims(), c.dims, "build_training_set");
  require_same_dims(v.dims(), s.dims(), "build_training_set");
  require_same_dims(v.dims(), w.dims, "build_training_set");
  TrainingSet ts;
  auto& b = ts.balance;
  b.scr_f = s.foreground().size();
  b.scr_b = s.background().size();
  std::vector<std::size_t> seg;
  seg.reserve(kept.size());
  for (auto i : kept) {
    if (i >= c.labels.size()) throw Error(ErrorKind::kBounds, "kept index outside label map");
    if (s.contains(i)) continue;
    seg.push_back(i);
    (c.labels[i] ? b.seg_f : b.seg_b) += 1;
  }
  const std::size_t total = b.total();
  if (total == 0) {
    throw Error(ErrorKind::kNothingToLearn,
                "nothing to learn: no scribbles and no confident initial labels kept");
  }
  auto ratio = [total](std::size_t n) { return ClassWeight{n ? total : 0, n}; };
  b.alpha_f = ratio(b.seg_f);
  b.alpha_b = ratio(b.seg_b);
  b.beta_f = ratio(b.scr_f);
  b.beta_b = ratio(b.scr_b);

  ts.samples.reserve(total);
  for (auto i : s.all()) {
    const bool fg = s.foreground().count(i) > 0;
    ts.samples.push_back({i, static_cast<std::uint8_t>(fg), SampleSource::kScribble, w.w[i],
                          (fg ? b.beta_f : b.beta_b).value()});
  }
  for (auto i : seg) {
    const bool fg = c.labels[i] != 0;
    ts.samples.push_back({i, static_cast<std::uint8_t>(fg), SampleSource::kSegmentation,
                          1.0 - w.w[i], (fg ? b.alpha_f : b.alpha_b).value()});
  }
  return ts;
}

template <class T>
LossResult<T> adaptive_loss(std::span<const TrainingSample> batch, const Tensor<T>& logits) {
  if (logits.rank() != 2 || logits.dim(1) != 2 || logits.dim(0) != batch.size()) {
    throw Error(ErrorKind::kDimsMismatch, "adaptive_loss expects logits [n, 2]");
  }
  check_finite(logits, "logits");
  const std::size_t n = batch.size();
  LossResult<T> r;
  r.grad_logits = Tensor<T>(logits.shape());
  if (n == 0) return r;
  const Tensor<T> lsm = log_softmax(logits);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& smp = batch[i];
    const double coef = smp.weight * smp.class_weight;
    const std::size_t y = smp.label ? 1 : 0;
    total -= coef * static_cast<double>(lsm[2 * i + y]);
    for (std::size_t j = 0; j < 2; ++j) {
      const double p = std::exp(static_cast<double>(lsm[2 * i + j]));
      r.grad_logits[2 * i + j] = static_cast<T>(coef * (p - (j == y ? 1.0 : 0.0)) * inv_n);
    }
  }
  r.loss = total * inv_n;
  return r;
}

// ---------------------------------------------------------------- training

namespace {

template <class T>
void apply_sgd(MonetNet<T>& net, const std::vector<Tensor<T>>& grads, double lr) {
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    check_finite(grads[i], "gradients");
    sgd_step<T>(params[i]->span(), grads[i].span(), lr);
  }
}

template <class T>
double train_batches(MonetNet<T>& net, const PatchBatch<T>& all,
                     std::span<const TrainingSample> samples, std::vector<std::size_t>& order,
                     std::size_t batch_size, bool shuffle, double lr, Rng& shuffle_rng,
                     Rng& dropout_rng) {
  const std::size_t n = samples.size();
  if (shuffle) shuffle_rng.shuffle(order.begin(), order.end());
  double sum = 0;
  MonetCache<T> cache;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t len = std::min(batch_size, n - start);
    const bool whole = len == n && !shuffle;
    std::span<const std::size_t> rows(order.data() + start, len);
    PatchBatch<T> sub;
    std::vector<TrainingSample> sub_samples;
    if (!whole) {
      sub = gather_rows(all, rows);
      sub_samples.reserve(len);
      for (auto r : rows) sub_samples.push_back(samples[r]);
    }
    const PatchBatch<T>& batch = whole ? all : sub;
    std::span<const TrainingSample> bs = whole ? samples : std::span<const TrainingSample>(sub_samples);
    const Tensor<T> logits = monet_forward(net, batch, true, &dropout_rng, &cache);
    const auto loss = adaptive_loss<T>(bs, logits);
    if (!std::isfinite(loss.loss)) {
      throw Error(ErrorKind::kDivergence, "training loss became non-finite");
    }
    const auto grads = monet_backward(net, batch, cache, loss.grad_logits);
    apply_sgd(net, grads, lr);
    sum += loss.loss * static_cast<double>(len);
  }
  return sum / static_cast<double>(n);
}

}  // namespace

template <class T>
TrainResult train_online(MonetNet<T>& net, const Volume& v,
                         std::span<const TrainingSample> samples, const MonetConfig& cfg,
                         Rng& rng) {
  cfg.validate();
  if (samples.empty()) throw Error(ErrorKind::kNothingToLearn, "nothing to learn: no samples");
  std::vector<std::size_t> centers;
  centers.reserve(samples.size());
  for (const auto& s : samples) centers.push_back(s.center);
  const PatchBatch<T> all = extract_patch_columns<T>(v, centers, net.config().scales);

  const std::size_t n = samples.size();
  const bool minibatch = n > static_cast<std::size_t>(cfg.full_batch_limit);
  const std::size_t batch_size = minibatch ? static_cast<std::size_t>(cfg.minibatch_size) : n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng = rng.fork(1);
  Rng dropout_rng = rng.fork(2);
  const LrSchedule sched = LrSchedule::cosine(cfg.online_lr, std::max(cfg.online_epochs, 1));
  TrainResult result;
  for (int epoch = 0; epoch < cfg.online_epochs; ++epoch) {
    const double loss = train_batches(net, all, samples, order, batch_size, minibatch,
                                      sched.lr(epoch), shuffle_rng, dropout_rng);
    result.loss_curve.push_back(loss);
  }
  if (cfg.online_epochs > 0) net.trained = true;
  return result;
}

template <class T>
PretrainResult pretrain_offline(MonetNet<T>& net, std::span<const LabeledVolume> data,
                                const MonetConfig& cfg, Rng& rng) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorKind::kConfig, "pretraining needs at least one volume");
  PretrainResult result;
  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> classes;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.size(); ++i) {
    require_same_dims(data[i].volume.dims(), data[i].labels.dims, "pretrain_offline");
    std::vector<std::size_t> fg, bg;
    for (std::size_t j = 0; j < data[i].labels.labels.size(); ++j) {
      (data[i].labels.labels[j] ? fg : bg).push_back(j);
    }
    if (fg.empty() || bg.empty()) {
      result.warnings.push_back("volume " + std::to_string(i) +
                                " skipped: it does not contain both classes");
    } else {
      usable.push_back(i);
    }
    classes.emplace_back(std::move(fg), std::move(bg));
  }
  if (usable.empty()) return result;

  const LrSchedule sched = LrSchedule::step(cfg.pretrain_lr, cfg.pretrain_drops, 0.1);
  Rng sample_rng = rng.fork(11);
  Rng shuffle_rng = rng.fork(12);
  Rng dropout_rng = rng.fork(13);
  const auto per_class = static_cast<std::size_t>(cfg.pretrain_samples_per_class);
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    double epoch_loss = 0;
    std::size_t epoch_n = 0;
    for (auto vi : usable) {
      const auto& [fg, bg] = classes[vi];
      std::vector<std::size_t> centers;
      std::vector<TrainingSample> samples;
      for (const auto* pool : {&fg, &bg}) {
        const std::uint8_t label = pool == &fg ? 1 : 0;
        for (std::size_t k = 0; k < per_class; ++k) {
          const std::size_t idx = (*pool)[sample_rng.below(pool->size())];
          centers.push_back(idx);
          samples.push_back({idx, label, SampleSource::kSegmentation, 1.0, 1.0});
        }
      }
      const auto all = extract_patch_columns<T>(data[vi].volume, centers, net.config().scales);
      std::vector<std::size_t> order(samples.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      const double loss =
          train_batches(net, all, std::span<const TrainingSample>(samples), order,
                        static_cast<std::size_t>(cfg.minibatch_size), true, sched.lr(epoch),
                        shuffle_rng, dropout_rng);
      epoch_loss += loss * static_cast<double>(samples.size());
      epoch_n += samples.size();
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(epoch_n));
  }
  if (cfg.pretrain_epochs > 0) net.trained = true;
  return result;
}

// ------------------------------------------------------------- checkpoints

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

struct Reader {
  std::string_view bytes;
  std::size_t pos = 0;
  std::uint32_t u32() {
    if (bytes.size() - pos < 4) throw Error(ErrorKind::kTruncation, "checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
};

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::string encode_checkpoint(const MonetNet<float>& net) {
  const auto& c = net.config();
  std::string out = "MONW";
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(c.patch_size));
  put_u32(out, static_cast<std::uint32_t>(c.scales.size()));
  for (int k : c.scales) put_u32(out, static_cast<std::uint32_t>(k));
  put_u32(out, static_cast<std::uint32_t>(c.filters_per_scale));
  put_u32(out, static_cast<std::uint32_t>(c.fc_sizes.size()));
  for (int f : c.fc_sizes) put_u32(out, static_cast<std::uint32_t>(f));
  put_u32(out, net.trained ? 1 : 0);
  const auto tensors = net.state();
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto* t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t->size()));
    for (float v : t->span()) put_f32(out, v);
  }
  put_u32(out, crc_of(out));
  return out;
}

MonetNet<float> decode_checkpoint(std::string_view bytes, const MonetConfig& base) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != "MONW") {
    throw Error(ErrorKind::kParse, "bad checkpoint magic");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  Reader tail{bytes, bytes.size() - 4};
  if (tail.u32() != crc_of(body)) throw Error(ErrorKind::kValidation, "checkpoint CRC mismatch");
  Reader r{body, 4};
  if (const auto version = r.u32(); version != 1) {
    throw Error(ErrorKind::kParse, "unsupported checkpoint version " + std::to_string(version));
  }
  MonetConfig cfg = base;
  cfg.patch_size = static_cast<int>(r.u32());
  const auto ns = r.u32();
  if (ns == 0 || ns > 64) throw Error(ErrorKind::kParse, "bad scale count in checkpoint");
  cfg.scales.clear();
  for (std::uint32_t i = 0; i < ns; ++i) cfg.scales.push_back(static_cast<int>(r.u32()));
  cfg.filters_per_scale = static_cast<int>(r.u32());
  const auto nf = r.u32();
  if (nf == 0 || nf > 64) throw Error(ErrorKind::kParse, "bad layer count in checkpoint");
  cfg.fc_sizes.clear();
  for (std::uint32_t i = 0; i < nf; ++i) cfg.fc_sizes.push_back(static_cast<int>(r.u32()));
  MonetNet<float> net(cfg);
  net.trained = r.u32() != 0;
  auto tensors = net.state();
  if (r.u32() != tensors.size()) throw Error(ErrorKind::kValidation, "checkpoint layer manifest mismatch");
  for (auto* t : tensors) {
    if (r.u32() != t->size()) throw Error(ErrorKind::kValidation, "checkpoint tensor size mismatch");
    for (auto& v : t->span()) v = r.f32();
  }
  if (r.pos != body.size()) throw Error(ErrorKind::kValidation, "trailing bytes in checkpoint");
  return net;
}

void save_checkpoint(const MonetNet<float>& net, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(net));
}

MonetNet<float> load_checkpoint(const std::filesystem::path& path, const MonetConfig& base) {
  return decode_checkpoint(read_file(path), base);
}

#define MONETSEG_INSTANTIATE_MONET(T)                                                        \
  template class MonetNet<T>;                                                                \
  template PatchBatch<T> extract_patch_columns<T>(const Volume&, std::span<const std::size_t>, \
                                                  const std::vector<int>&);                  \
  template PatchBatch<T> gather_rows<T>(const PatchBatch<T>&, std::span<const std::size_t>); \
  template Tensor<T> monet_forward<T>(MonetNet<T>&, const PatchBatch<T>&, bool, Rng*,       \
                                      MonetCache<T>*);                                       \
  template std::vector<Tensor<T>> monet_backward<T>(const MonetNet<T>&, const PatchBatch<T>&, \
                                                    const MonetCache<T>&, const Tensor<T>&); \
  template std::array<T, 2> monet_forward_patch<T>(MonetNet<T>&, const Tensor<T>&, bool);   \
  template Tensor<T> monet_infer_logits<T>(const MonetNet<T>&, const Volume&);              \
  template ProbMap monet_infer_volume<T>(const MonetNet<T>&, const Volume&);                \
  template LossResult<T> adaptive_loss<T>(std::span<const TrainingSample>, const Tensor<T>&); \
  template TrainResult train_online<T>(MonetNet<T>&, const Volume&,                          \
                                       std::span<const TrainingSample>, const MonetConfig&,  \
                                       Rng&);                                                \
  template PretrainResult pretrain_offline<T>(MonetNet<T>&, std::span<const LabeledVolume>,  \
                                              const MonetConfig&, Rng&);

MONETSEG_INSTANTIATE_MONET(float)
MONETSEG_INSTANTIATE_MONET(double)
template MonetNet<double> MonetNet<float>::cast<double>() const;
template MonetNet<float> MonetNet<double>::cast<float>() const;
template MonetNet<float> MonetNet<float>::cast<float>() const;

}  // namespace monetseg
