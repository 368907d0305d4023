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

// Python bindings. Arrays are C-ordered (z, y, x) so x is the fastest axis,
// the same layout as Volume. Scribbles are uint8 arrays: 0 none,
// 1 foreground, 2 background.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "monetseg/error.hpp"
#include "monetseg/geodesic.hpp"
#include "monetseg/graphcut.hpp"
#include "monetseg/io.hpp"
#include "monetseg/metrics.hpp"
#include "monetseg/scribbler.hpp"
#include "monetseg/session.hpp"

namespace py = pybind11;
using namespace monetseg;

namespace {

template <class T>
using CArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

Dims dims_of(const py::array& a, const char* name) {
  if (a.ndim() != 3) throw Error(ErrorKind::kValidation, std::string(name) + " must be a 3-D (z, y, x) array");
  return {static_cast<int>(a.shape(2)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0))};
}

Spacing spacing_of(const std::array<double, 3>& s) { return {s[0], s[1], s[2]}; }

template <class T>
std::vector<T> values_of(const CArray<T>& a) {
  return std::vector<T>(a.data(), a.data() + a.size());
}

template <class T>
py::array_t<T> to_array(const Dims& d, std::span<const T> v) {
  py::array_t<T> out({static_cast<py::ssize_t>(d.nz), static_cast<py::ssize_t>(d.ny), static_cast<py::ssize_t>(d.nx)});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Volume volume_of(const CArray<float>& a, const std::array<double, 3>& spacing) {
  return Volume(dims_of(a, "volume"), spacing_of(spacing), values_of(a));
}

LabelMap labels_of(const CArray<std::uint8_t>& a, const char* name) {
  return LabelMap(dims_of(a, name), values_of(a));
}

ProbMap prob_of(const CArray<float>& a) { return ProbMap(dims_of(a, "prob"), values_of(a)); }

ScribbleSet scribbles_of(const CArray<std::uint8_t>& a) {
  ScribbleSet s(dims_of(a, "scribbles"));
  const auto* p = a.data();
  for (py::ssize_t i = 0; i < a.size(); ++i) {
    if (p[i] == 1) s.add(static_cast<std::size_t>(i), Label::kForeground);
    else if (p[i] == 2) s.add(static_cast<std::size_t>(i), Label::kBackground);
    else if (p[i] != 0) throw Error(ErrorKind::kValidation, "scribble codes must be 0, 1 or 2");
  }
  return s;
}

py::array_t<std::uint8_t> scribble_array(const ScribbleSet& s) {
  std::vector<std::uint8_t> codes(s.dims().size(), 0);
  for (auto i : s.foreground()) codes[i] = 1;
  for (auto i : s.background()) codes[i] = 2;
  return to_array<std::uint8_t>(s.dims(), codes);
}

py::array_t<double> distance_array(const DistanceMap& d) { return to_array<double>(d.dims, d.dist); }

py::dict round_dict(const RoundResult& r) {
  py::dict d;
  d["round"] = r.round;
  d["changed_voxels"] = r.changed_voxels;
  d["training_samples"] = r.training_samples;
  d["scribble_voxels"] = r.scribble_voxels;
  py::dict t;
  t["weights"] = r.times.weights;
  t["train"] = r.times.train;
  t["infer"] = r.times.infer;
  t["graphcut"] = r.times.graphcut;
  d["timings"] = t;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Interactive volumetric segmentation refinement";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result([&] {
    return py::reinterpret_steal<py::object>(
        PyErr_NewException("monetseg._core.MonetsegError", PyExc_RuntimeError, nullptr));
  });
  m.attr("MonetsegError") = error_type.get_stored();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = error_type.get_stored()(e.what());
      err.attr("kind") = to_string(e.kind());
      PyErr_SetObject(error_type.get_stored().ptr(), err.ptr());
    }
  });

  m.def(
      "geodesic_distance",
      [](const CArray<float>& volume, const CArray<std::uint8_t>& scribbles, int connectivity, int passes,
         bool exact, std::array<double, 3> spacing) {
        const Volume v = volume_of(volume, spacing);
        const ScribbleSet s = scribbles_of(scribbles);
        require_same_dims(v.dims(), s.dims(), "scribbles");
        GeodesicConfig cfg;
        cfg.connectivity = connectivity;
        cfg.passes = passes;
        cfg.validate();
        const auto seeds = s.all();
        return distance_array(exact ? geodesic_distance_exact(v, seeds, cfg) : geodesic_distance(v, seeds, cfg));
      },
      py::arg("volume"), py::arg("scribbles"), py::arg("connectivity") = 26, py::arg("passes") = 4,
      py::arg("exact") = false, py::arg("spacing") = std::array<double, 3>{1, 1, 1},
      "Intensity-geodesic distance to the nearest scribble voxel (inf when none).");

  m.def(
      "adaptive_weights",
      [](const CArray<float>& volume, const CArray<std::uint8_t>& scribbles, double tau) {
        const Volume v = volume_of(volume, {1, 1, 1});
        const ScribbleSet s = scribbles_of(scribbles);
        require_same_dims(v.dims(), s.dims(), "scribbles");
        GeodesicConfig cfg;
        cfg.tau = tau;
        cfg.validate();
        const auto w = weights_from_distance(geodesic_distance(v, s, cfg), tau);
        return to_array<double>(w.dims, w.w);
      },
      py::arg("volume"), py::arg("scribbles"), py::arg("tau") = 0.3, "W = exp(-D / tau).");

  m.def(
      "graphcut",
      [](const CArray<float>& prob, const CArray<float>& volume, std::optional<CArray<std::uint8_t>> scribbles,
         double lambda, double sigma) {
        const ProbMap p = prob_of(prob);
        const Volume v = volume_of(volume, {1, 1, 1});
        const ScribbleSet s = scribbles ? scribbles_of(*scribbles) : ScribbleSet(p.dims);
        GraphCutConfig cfg;
        cfg.lambda = lambda;
        cfg.sigma = sigma;
        const auto r = graphcut_solve(p, v, s, cfg);
        return py::make_tuple(to_array<std::uint8_t>(r.labels.dims, r.labels.labels), r.energy);
      },
      py::arg("prob"), py::arg("volume"), py::arg("scribbles") = py::none(), py::arg("lambda_") = 2.5,
      py::arg("sigma") = 0.15, "Exact binary MRF labelling; returns (labels, energy).");

  m.def(
      "dice",
      [](const CArray<std::uint8_t>& a, const CArray<std::uint8_t>& b) {
        return dice(labels_of(a, "a"), labels_of(b, "b"));
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "assd",
      [](const CArray<std::uint8_t>& a, const CArray<std::uint8_t>& b, std::array<double, 3> spacing) {
        return assd(labels_of(a, "a"), labels_of(b, "b"), spacing_of(spacing));
      },
      py::arg("a"), py::arg("b"), py::arg("spacing") = std::array<double, 3>{1, 1, 1});

  m.def(
      "make_phantom",
      [](std::array<int, 3> shape, int blobs, double radius_min, double radius_max, double contrast, double noise,
         std::uint64_t seed) {
        PhantomSpec spec;
        spec.dims = {shape[2], shape[1], shape[0]};
        spec.blobs = blobs;
        spec.radius_min = radius_min;
        spec.radius_max = radius_max;
        spec.contrast = contrast;
        spec.noise_std = noise;
        spec.seed = seed;
        const auto ph = make_phantom(spec);
        return py::make_tuple(to_array<float>(ph.volume.dims(), ph.volume.data()),
                              to_array<std::uint8_t>(ph.truth.dims, ph.truth.labels));
      },
      py::arg("shape") = std::array<int, 3>{32, 32, 32}, py::arg("blobs") = 1, py::arg("radius_min") = 4.0,
      py::arg("radius_max") = 8.0, py::arg("contrast") = 0.6, py::arg("noise") = 0.05, py::arg("seed") = 0,
      "Synthetic ellipsoid phantom; returns (volume, truth).");

  m.def(
      "corrupt",
      [](const CArray<std::uint8_t>& truth, std::optional<std::pair<double, double>> target_dice, double amplitude,
         int fp_blobs, std::uint64_t seed) {
        CorruptionSpec cs;
        cs.amplitude = amplitude;
        cs.false_positive_blobs = fp_blobs;
        cs.seed = seed;
        const LabelMap t = labels_of(truth, "truth");
        const auto c = target_dice ? calibrate_corruption(t, cs, target_dice->first, target_dice->second)
                                   : corrupt_segmentation(t, cs);
        return py::make_tuple(to_array<std::uint8_t>(c.seg.dims, c.seg.labels), to_array<float>(c.prob.dims, c.prob.prob),
                              c.dice);
      },
      py::arg("truth"), py::arg("target_dice") = py::none(), py::arg("amplitude") = 0.0, py::arg("fp_blobs") = 0,
      py::arg("seed") = 0, "Imperfect initial segmentation; returns (seg, prob, dice).");

  m.def(
      "synthesize_scribbles",
      [](const CArray<std::uint8_t>& pred, const CArray<std::uint8_t>& truth,
         std::optional<CArray<std::uint8_t>> existing, std::uint64_t seed) {
        const LabelMap p = labels_of(pred, "pred");
        ScribblerConfig cfg;
        cfg.seed = seed;
        const ScribbleSet e = existing ? scribbles_of(*existing) : ScribbleSet(p.dims);
        return scribble_array(synthesize_scribbles(p, labels_of(truth, "truth"), cfg, e));
      },
      py::arg("pred"), py::arg("truth"), py::arg("existing") = py::none(), py::arg("seed") = 0,
      "Corrective scribbles for one round (new voxels only).");

  m.def(
      "read_volume",
      [](const std::string& path) {
        const Volume v = read_volume(path);
        const Spacing& s = v.spacing();
        return py::make_tuple(to_array<float>(v.dims(), v.data()), std::array<double, 3>{s.sx, s.sy, s.sz});
      },
      py::arg("path"), "Returns (array, (sx, sy, sz)).");
  m.def(
      "write_volume",
      [](const std::string& path, const CArray<float>& a, std::array<double, 3> spacing) {
        write_nrrd(volume_of(a, spacing), path);
      },
      py::arg("path"), py::arg("array"), py::arg("spacing") = std::array<double, 3>{1, 1, 1});
  m.def(
      "read_label_map",
      [](const std::string& path) {
        const LabelMap l = read_label_map(path);
        return to_array<std::uint8_t>(l.dims, l.labels);
      },
      py::arg("path"));
  m.def(
      "write_label_map",
      [](const std::string& path, const CArray<std::uint8_t>& a) { write_nrrd(labels_of(a, "labels"), path); },
      py::arg("path"), py::arg("array"));

  py::class_<Session>(m, "Session")
      .def(py::init([](const CArray<float>& volume, const CArray<std::uint8_t>& init_seg,
                       const CArray<float>& init_prob, std::uint64_t seed, int epochs,
                       std::array<double, 3> spacing) {
             RefineSettings st;
             st.seed = seed;
             st.monet.online_epochs = epochs;
             return Session(volume_of(volume, spacing), labels_of(init_seg, "init_seg"), prob_of(init_prob), st);
           }),
           py::arg("volume"), py::arg("init_seg"), py::arg("init_prob"), py::arg("seed") = 0,
           py::arg("epochs") = 200, py::arg("spacing") = std::array<double, 3>{1, 1, 1})
      .def(
          "add_scribbles",
          [](Session& s, const CArray<std::uint8_t>& scribbles) {
            const ScribbleSet add = scribbles_of(scribbles);
            require_same_dims(s.volume().dims(), add.dims(), "scribbles");
            s.add_scribbles(add);
            return s.scribbles().size();
          },
          py::arg("scribbles"), "Merge scribbles; returns the total scribbled voxel count.")
      .def(
          "refine",
          [](Session& s, std::optional<int> epochs, std::optional<double> tau, std::optional<double> lambda_,
             std::optional<double> sigma) {
            RefineOverrides o;
            o.epochs = epochs;
            o.tau = tau;
            o.lambda = lambda_;
            o.sigma = sigma;
            RoundResult r;
            {
              py::gil_scoped_release release;
              r = s.refine_round(o);
            }
            return round_dict(r);
          },
          py::arg("epochs") = py::none(), py::arg("tau") = py::none(), py::arg("lambda_") = py::none(),
          py::arg("sigma") = py::none(), "Run one refinement round.")
      .def_property_readonly("round", &Session::round)
      .def_property_readonly("result",
                             [](const Session& s) { return to_array<std::uint8_t>(s.result().dims, s.result().labels); })
      .def_property_readonly(
          "probabilities", [](const Session& s) { return to_array<float>(s.probabilities().dims, s.probabilities().prob); })
      .def_property_readonly("weights", [](const Session& s) { return to_array<double>(s.weights().dims, s.weights().w); })
      .def_property_readonly("scribbles", [](const Session& s) { return scribble_array(s.scribbles()); });
}
