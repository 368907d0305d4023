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

#include "monetseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "monetseg/error.hpp"

namespace monetseg {

namespace {

std::string dims_str(const Dims& d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" +
         std::to_string(d.nz);
}

void require_valid(const Dims& d) {
  if (!d.valid()) {
    throw Error(ErrorKind::kValidation, "non-positive dims " + dims_str(d));
  }
}

}  // namespace

std::size_t linear_index(Coord c, const Dims& dims) {
  if (!dims.contains(c.x, c.y, c.z)) {
    throw Error(ErrorKind::kBounds,
                "coordinate (" + std::to_string(c.x) + "," + std::to_string(c.y) +
                    "," + std::to_string(c.z) + ") outside " + dims_str(dims));
  }
  return linear_index_unchecked(c.x, c.y, c.z, dims);
}

Coord coord_of(std::size_t index, const Dims& dims) {
  if (index >= dims.size()) {
    throw Error(ErrorKind::kBounds, "index " + std::to_string(index) +
                                        " outside " + dims_str(dims));
  }
  const auto nx = static_cast<std::size_t>(dims.nx);
  const auto ny = static_cast<std::size_t>(dims.ny);
  return Coord{static_cast<int>(index % nx), static_cast<int>((index / nx) % ny),
               static_cast<int>(index / (nx * ny))};
}

void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (!(a == b)) {
    throw Error(ErrorKind::kDimsMismatch,
                std::string(what) + ": dims " + dims_str(a) + " vs " + dims_str(b));
  }
}

Volume::Volume(Dims dims, Spacing spacing, std::vector<float> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  require_valid(dims_);
  if (!(spacing_.sx > 0 && spacing_.sy > 0 && spacing_.sz > 0)) {
    throw Error(ErrorKind::kValidation, "spacing must be strictly positive");
  }
  if (data_.size() != dims_.size()) {
    throw Error(ErrorKind::kValidation,
                "volume data length " + std::to_string(data_.size()) +
                    " does not match dims " + dims_str(dims_));
  }
  for (float v : data_) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kValidation, "volume contains non-finite value");
    }
  }
  const auto [mn, mx] = std::minmax_element(data_.begin(), data_.end());
  range_ = {*mn, *mx};
}

Volume normalize_volume(const Volume& v) {
  std::vector<float> out(v.size(), 0.0f);
  const double lo = v.lo();
  const double span = static_cast<double>(v.hi()) - lo;
  if (span > 0) {
    auto in = v.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<float>((in[i] - lo) / span);
    }
  }
  return Volume(v.dims(), v.spacing(), std::move(out));
}

LabelMap::LabelMap(Dims d, std::vector<std::uint8_t> l)
    : dims(d), labels(std::move(l)) {
  require_valid(dims);
  if (labels.size() != dims.size()) {
    throw Error(ErrorKind::kValidation, "label map length does not match dims");
  }
  for (auto v : labels) {
    if (v > 1) throw Error(ErrorKind::kValidation, "label value outside {0,1}");
  }
}

std::size_t LabelMap::count_foreground() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

ProbMap::ProbMap(Dims d, std::vector<float> p) : dims(d), prob(std::move(p)) {
  require_valid(dims);
  if (prob.size() != dims.size()) {
    throw Error(ErrorKind::kValidation, "probability map length does not match dims");
  }
  for (float v : prob) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error(ErrorKind::kValidation, "probability outside [0,1]");
    }
  }
}

LabelMap ProbMap::argmax() const {
  LabelMap out(dims);
  for (std::size_t i = 0; i < prob.size(); ++i) out.labels[i] = prob[i] > 0.5f;
  return out;
}

void ScribbleSet::add(std::size_t index, Label label) {
  if (index >= dims_.size()) {
    throw Error(ErrorKind::kBounds,
                "scribble index " + std::to_string(index) + " outside " + dims_str(dims_));
  }
  if (label == Label::kForeground) {
    bg_.erase(index);
    fg_.insert(index);
  } else {
    fg_.erase(index);
    bg_.insert(index);
  }
}

bool ScribbleSet::remove(std::size_t index) {
  return fg_.erase(index) + bg_.erase(index) > 0;
}

void ScribbleSet::merge(const ScribbleSet& other) {
  require_same_dims(dims_, other.dims_, "ScribbleSet::merge");
  for (auto i : other.fg_) add(i, Label::kForeground);
  for (auto i : other.bg_) add(i, Label::kBackground);
}

void ScribbleSet::clear() {
  fg_.clear();
  bg_.clear();
}

std::optional<Label> ScribbleSet::label_at(std::size_t index) const {
  if (fg_.count(index)) return Label::kForeground;
  if (bg_.count(index)) return Label::kBackground;
  return std::nullopt;
}

std::vector<std::size_t> ScribbleSet::all() const {
  std::vector<std::size_t> out;
  out.reserve(size());
  std::merge(fg_.begin(), fg_.end(), bg_.begin(), bg_.end(), std::back_inserter(out));
  return out;
}

}  // namespace monetseg
