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

// Command-line front end: data conversion, synthetic data, single pipeline
// stages, the headless refinement loop and the HTTP service.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "monetseg/error.hpp"
#include "monetseg/geodesic.hpp"
#include "monetseg/graphcut.hpp"
#include "monetseg/io.hpp"
#include "monetseg/metrics.hpp"
#include "monetseg/monet.hpp"
#include "monetseg/scribbler.hpp"
#include "monetseg/service.hpp"
#include "monetseg/session.hpp"

namespace ms = monetseg;

namespace {

enum ExitCode : int {
  kOk = 0,
  kOther = 1,
  kMissingFile = 2,
  kInvalid = 3,
  kDiverged = 4,
  kNothingToLearn = 5,
};

int exit_code_for(ms::ErrorKind k) {
  switch (k) {
    case ms::ErrorKind::kIo: return kMissingFile;
    case ms::ErrorKind::kDivergence: return kDiverged;
    case ms::ErrorKind::kNothingToLearn: return kNothingToLearn;
    case ms::ErrorKind::kUndefinedMetric: return kOther;
    default: return kInvalid;
  }
}

ms::Dims dims_from(const std::vector<int>& v) {
  if (v.size() != 3) throw ms::Error(ms::ErrorKind::kConfig, "--dims takes three sizes");
  return ms::Dims{v[0], v[1], v[2]};
}

struct RefineArgs {
  std::string volume, init_seg, init_prob, gt, scribbles;
  int rounds = 5;
  std::string scribbler_config, monet_config;
  std::string model_in, model_out, report, output, prob_out;
  std::uint64_t seed = 0;
  double tau = 0.3, lambda = 2.5, sigma = 0.15, zeta = 0.8, eta = 0.98;
  std::optional<int> epochs;
  bool single_scale = false;
  bool no_timings = false;
};

int run_refine(const RefineArgs& a) {
  const ms::Volume volume = ms::read_volume(a.volume);
  const ms::LabelMap init = ms::read_label_map(a.init_seg);
  const ms::ProbMap prob = ms::read_prob_map(a.init_prob);
  std::optional<ms::LabelMap> gt;
  if (!a.gt.empty()) {
    gt = ms::read_label_map(a.gt);
    ms::require_same_dims(volume.dims(), gt->dims, "ground truth");
  }

  ms::RefineSettings settings;
  if (!a.monet_config.empty()) settings.monet = ms::parse_monet_config(ms::read_file(a.monet_config));
  if (a.single_scale) settings.monet = ms::MonetConfig::single_scale(settings.monet);
  if (a.epochs) settings.monet.online_epochs = *a.epochs;
  settings.monet.seed = a.seed;
  settings.geodesic.tau = a.tau;
  settings.graphcut.lambda = a.lambda;
  settings.graphcut.sigma = a.sigma;
  settings.zeta = a.zeta;
  settings.eta = a.eta;
  settings.seed = a.seed;

  ms::ScribblerConfig scfg;
  scfg.seed = a.seed;
  if (!a.scribbler_config.empty()) scfg = ms::parse_scribbler_config(ms::read_file(a.scribbler_config), scfg);

  std::optional<ms::MonetNet<float>> model;
  if (!a.model_in.empty()) model = ms::load_checkpoint(a.model_in, settings.monet);
  ms::Session session(volume, init, prob, settings, std::move(model));
  if (!a.scribbles.empty()) {
    const auto s = ms::read_scribbles(a.scribbles);
    ms::require_same_dims(volume.dims(), s.dims(), "scribbles");
    session.add_scribbles(s);
  }

  std::ofstream report;
  if (!a.report.empty()) {
    report.open(a.report, std::ios::binary | std::ios::trunc);
    if (!report) throw ms::Error(ms::ErrorKind::kIo, "cannot open report " + a.report);
  }
  auto emit = [&](ms::EvalReport r) {
    const std::string line = ms::format_report_line(r, gt.has_value(), !a.no_timings);
    if (report.is_open()) {
      report << line << '\n';
      report.flush();
    } else {
      std::cout << line << '\n';
    }
  };

  auto row = [&](int round, const ms::StageTimes& t) {
    ms::EvalReport r;
    if (gt) r = ms::evaluate(session.result(), *gt, volume.spacing(), round, session.scribbles().size());
    r.round = round;
    r.scribble_voxels = session.scribbles().size();
    r.times = t;
    return r;
  };
  emit(row(0, {}));

  for (int round = 1; round <= a.rounds; ++round) {
    if (gt) session.add_scribbles(ms::synthesize_scribbles(session.result(), *gt, scfg, session.scribbles()));
    const ms::RoundResult rr = session.refine_round();
    emit(row(round, rr.times));
  }

  if (!a.output.empty()) ms::write_nrrd(session.result(), a.output, volume.spacing());
  if (!a.prob_out.empty()) ms::write_nrrd(session.probabilities(), a.prob_out, volume.spacing());
  if (!a.model_out.empty()) ms::save_checkpoint(session.model(), a.model_out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scribble-driven refinement of 3D segmentations"};
  app.require_subcommand(1);

  // convert
  std::string conv_in, conv_out, conv_type = "float";
  bool conv_normalize = false;
  auto* convert = app.add_subcommand("convert", "Re-encode a volume (raw little-endian NRRD)");
  convert->add_option("--input", conv_in)->required();
  convert->add_option("--output", conv_out)->required();
  convert->add_option("--type", conv_type, "float, uint8 or int16")
      ->check(CLI::IsMember({"float", "uint8", "int16"}));
  convert->add_flag("--normalize", conv_normalize, "rescale intensities to [0, 1] first");

  // phantom
  ms::PhantomSpec ph;
  std::vector<int> ph_dims{32, 32, 32};
  std::string ph_volume, ph_truth;
  auto* phantom = app.add_subcommand("phantom", "Synthetic ellipsoid phantom with ground truth");
  phantom->add_option("--dims", ph_dims)->expected(3);
  phantom->add_option("--blobs", ph.blobs);
  phantom->add_option("--radius-min", ph.radius_min);
  phantom->add_option("--radius-max", ph.radius_max);
  phantom->add_option("--contrast", ph.contrast);
  phantom->add_option("--noise", ph.noise_std);
  phantom->add_option("--seed", ph.seed);
  phantom->add_option("--volume-out", ph_volume)->required();
  phantom->add_option("--truth-out", ph_truth)->required();

  // corrupt
  ms::CorruptionSpec cs;
  std::string cs_truth, cs_seg, cs_prob;
  std::vector<double> cs_band;
  auto* corrupt = app.add_subcommand("corrupt", "Imperfect initial segmentation from a ground truth");
  corrupt->add_option("--truth", cs_truth)->required();
  corrupt->add_option("--amplitude", cs.amplitude, "voxels; positive erodes, negative dilates");
  corrupt->add_option("--drop", cs.drop_probability);
  corrupt->add_option("--fp-blobs", cs.false_positive_blobs);
  corrupt->add_option("--fp-radius", cs.false_positive_radius);
  corrupt->add_option("--temperature", cs.temperature);
  corrupt->add_option("--seed", cs.seed);
  corrupt->add_option("--target-dice", cs_band, "search the amplitude for Dice in [lo, hi]")->expected(2);
  corrupt->add_option("--seg-out", cs_seg)->required();
  corrupt->add_option("--prob-out", cs_prob)->required();

  // scribble-sim
  std::string ss_pred, ss_truth, ss_existing, ss_config, ss_out;
  std::uint64_t ss_seed = 0;
  auto* ssim = app.add_subcommand("scribble-sim", "Synthetic corrective scribbles for one round");
  ssim->add_option("--pred", ss_pred)->required();
  ssim->add_option("--truth", ss_truth)->required();
  ssim->add_option("--existing", ss_existing);
  ssim->add_option("--config", ss_config);
  ssim->add_option("--seed", ss_seed);
  ssim->add_option("--output", ss_out, "cumulative scribble file")->required();

  // geodesic
  std::string gd_volume, gd_scribbles, gd_dist, gd_weights;
  ms::GeodesicConfig gd;
  auto* geodesic = app.add_subcommand("geodesic", "Geodesic distance and weight maps");
  geodesic->add_option("--volume", gd_volume)->required();
  geodesic->add_option("--scribbles", gd_scribbles)->required();
  geodesic->add_option("--tau", gd.tau);
  geodesic->add_option("--connectivity", gd.connectivity)->check(CLI::IsMember({6, 26}));
  geodesic->add_option("--passes", gd.passes);
  geodesic->add_option("--distance-out", gd_dist);
  geodesic->add_option("--weights-out", gd_weights);

  // graphcut
  std::string gc_prob, gc_volume, gc_scribbles, gc_out;
  ms::GraphCutConfig gc;
  auto* graphcut = app.add_subcommand("graphcut", "Regularize a probability map");
  graphcut->add_option("--prob", gc_prob)->required();
  graphcut->add_option("--volume", gc_volume)->required();
  graphcut->add_option("--scribbles", gc_scribbles);
  graphcut->add_option("--lambda", gc.lambda);
  graphcut->add_option("--sigma", gc.sigma);
  graphcut->add_option("--output", gc_out)->required();

  // refine
  RefineArgs ra;
  auto* refine = app.add_subcommand("refine", "Headless refinement with the synthetic scribbler");
  refine->add_option("--volume", ra.volume)->required();
  refine->add_option("--init-seg", ra.init_seg)->required();
  refine->add_option("--init-prob", ra.init_prob)->required();
  refine->add_option("--gt", ra.gt);
  refine->add_option("--scribbles", ra.scribbles, "initial scribble file");
  refine->add_option("--rounds", ra.rounds)->check(CLI::NonNegativeNumber);
  refine->add_option("--scribbler-config", ra.scribbler_config);
  refine->add_option("--monet-config", ra.monet_config);
  refine->add_option("--model-in", ra.model_in);
  refine->add_option("--model-out", ra.model_out);
  refine->add_option("--report", ra.report, "JSON lines; stdout when omitted");
  refine->add_option("--output", ra.output, "final label map");
  refine->add_option("--prob-out", ra.prob_out);
  refine->add_option("--seed", ra.seed);
  refine->add_option("--tau", ra.tau);
  refine->add_option("--lambda", ra.lambda);
  refine->add_option("--sigma", ra.sigma);
  refine->add_option("--zeta", ra.zeta);
  refine->add_option("--eta", ra.eta);
  refine->add_option("--epochs", ra.epochs);
  refine->add_flag("--single-scale", ra.single_scale, "one kernel of the patch size");
  refine->add_flag("--no-timings", ra.no_timings, "write zero stage timings");

  // pretrain
  std::vector<std::string> pt_volumes, pt_labels;
  std::string pt_config, pt_out;
  std::uint64_t pt_seed = 0;
  std::optional<int> pt_epochs;
  auto* pretrain = app.add_subcommand("pretrain", "Offline class-balanced pre-training");
  pretrain->add_option("--volume", pt_volumes)->required();
  pretrain->add_option("--labels", pt_labels)->required();
  pretrain->add_option("--config", pt_config);
  pretrain->add_option("--epochs", pt_epochs);
  pretrain->add_option("--seed", pt_seed);
  pretrain->add_option("--model-out", pt_out)->required();

  // serve
  ms::ServiceOptions so = ms::ServiceOptions::from_environment(ms::ServiceOptions{});
  long so_ttl = static_cast<long>(so.session_ttl.count());
  auto* serve = app.add_subcommand("serve", "HTTP service for the annotation UI");
  serve->add_option("--host", so.host, "default from MONETSEG_BIND");
  serve->add_option("--port", so.port);
  serve->add_option("--ttl", so_ttl, "idle session lifetime in seconds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*convert) {
      const ms::NrrdImage img = ms::read_nrrd(conv_in);
      ms::Volume v = ms::to_volume(img);
      if (conv_normalize) v = ms::normalize_volume(v);
      const auto data = v.data();
      if (conv_type == "float") {
        ms::write_nrrd(v, conv_out);
      } else if (conv_type == "uint8") {
        std::vector<std::uint8_t> out(data.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
          const float x = data[i];
          if (!(x >= 0 && x <= 255) || x != static_cast<float>(static_cast<int>(x))) {
            throw ms::Error(ms::ErrorKind::kValidation, "value not representable as uint8");
          }
          out[i] = static_cast<std::uint8_t>(x);
        }
        ms::write_file(conv_out, ms::encode_nrrd_u8(v.dims(), v.spacing(), out));
      } else {
        std::vector<std::int16_t> out(data.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
          const float x = data[i];
          if (!(x >= -32768 && x <= 32767) || x != static_cast<float>(static_cast<int>(x))) {
            throw ms::Error(ms::ErrorKind::kValidation, "value not representable as int16");
          }
          out[i] = static_cast<std::int16_t>(x);
        }
        ms::write_file(conv_out, ms::encode_nrrd_i16(v.dims(), v.spacing(), out));
      }
    } else if (*phantom) {
      ph.dims = dims_from(ph_dims);
      const ms::Phantom p = ms::make_phantom(ph);
      if (ph.low_contrast()) std::cerr << "warning: contrast is at most twice the noise level\n";
      ms::write_nrrd(p.volume, ph_volume);
      ms::write_nrrd(p.truth, ph_truth, ph.spacing);
      std::cout << "foreground_voxels " << p.truth.count_foreground() << '\n';
    } else if (*corrupt) {
      const ms::LabelMap truth = ms::read_label_map(cs_truth);
      const ms::Corruption c = cs_band.empty()
                                   ? ms::corrupt_segmentation(truth, cs)
                                   : ms::calibrate_corruption(truth, cs, cs_band[0], cs_band[1], &cs);
      ms::write_nrrd(c.seg, cs_seg);
      ms::write_nrrd(c.prob, cs_prob);
      std::printf("dice %.6f amplitude %.2f seed %llu\n", c.dice, cs.amplitude,
                  static_cast<unsigned long long>(cs.seed));
    } else if (*ssim) {
      const ms::LabelMap pred = ms::read_label_map(ss_pred);
      const ms::LabelMap truth = ms::read_label_map(ss_truth);
      ms::ScribbleSet existing(pred.dims);
      if (!ss_existing.empty()) existing = ms::read_scribbles(ss_existing);
      ms::ScribblerConfig cfg;
      cfg.seed = ss_seed;
      if (!ss_config.empty()) cfg = ms::parse_scribbler_config(ms::read_file(ss_config), cfg);
      const ms::ScribbleSet add = ms::synthesize_scribbles(pred, truth, cfg, existing);
      existing.merge(add);
      ms::write_scribbles(existing, ss_out);
      std::cout << "added " << add.size() << " total " << existing.size() << '\n';
    } else if (*geodesic) {
      const ms::Volume v = ms::normalize_volume(ms::read_volume(gd_volume));
      const ms::ScribbleSet s = ms::read_scribbles(gd_scribbles);
      ms::require_same_dims(v.dims(), s.dims(), "scribbles");
      gd.validate();
      const ms::DistanceMap d = ms::geodesic_distance(v, s, gd);
      const ms::WeightMap w = ms::weights_from_distance(d, gd.tau);
      auto to_f32 = [](const std::vector<double>& x) { return std::vector<float>(x.begin(), x.end()); };
      if (!gd_dist.empty()) ms::write_nrrd_f32(v.dims(), v.spacing(), to_f32(d.dist), gd_dist);
      if (!gd_weights.empty()) ms::write_nrrd_f32(v.dims(), v.spacing(), to_f32(w.w), gd_weights);
    } else if (*graphcut) {
      const ms::ProbMap p = ms::read_prob_map(gc_prob);
      const ms::Volume v = ms::normalize_volume(ms::read_volume(gc_volume));
      ms::ScribbleSet s(v.dims());
      if (!gc_scribbles.empty()) s = ms::read_scribbles(gc_scribbles);
      const ms::GraphCutResult r = ms::graphcut_solve(p, v, s, gc);
      ms::write_nrrd(r.labels, gc_out, v.spacing());
      std::printf("energy %.9g\n", r.energy);
    } else if (*refine) {
      return run_refine(ra);
    } else if (*pretrain) {
      if (pt_volumes.size() != pt_labels.size()) {
        throw ms::Error(ms::ErrorKind::kConfig, "--volume and --labels must pair up");
      }
      ms::MonetConfig cfg;
      if (!pt_config.empty()) cfg = ms::parse_monet_config(ms::read_file(pt_config));
      if (pt_epochs) cfg.pretrain_epochs = *pt_epochs;
      cfg.seed = pt_seed;
      std::vector<ms::LabeledVolume> data;
      for (std::size_t i = 0; i < pt_volumes.size(); ++i) {
        ms::Volume v = ms::normalize_volume(ms::read_volume(pt_volumes[i]));
        ms::LabelMap l = ms::read_label_map(pt_labels[i]);
        ms::require_same_dims(v.dims(), l.dims, "labels");
        data.push_back({std::move(v), std::move(l)});
      }
      ms::MonetNet<float> net(cfg);
      ms::Rng rng(pt_seed);
      net.init(rng);
      const auto result = ms::pretrain_offline(net, std::span<const ms::LabeledVolume>(data), cfg, rng);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
      for (std::size_t e = 0; e < result.loss_curve.size(); ++e) {
        std::printf("epoch %zu loss %.6f\n", e + 1, result.loss_curve[e]);
      }
      ms::save_checkpoint(net, pt_out);
    } else if (*serve) {
      so.session_ttl = std::chrono::seconds(so_ttl);
      std::cerr << "listening on " << so.host << ':' << so.port << '\n';
      return ms::run_service(so);
    }
  } catch (const ms::Error& e) {
    std::cerr << "error (" << ms::to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOk;
}
