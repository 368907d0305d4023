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

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

namespace monetseg {

struct Dims {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz;
  }
  bool valid() const { return nx > 0 && ny > 0 && nz > 0; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

struct Coord {
  int x = 0;
  int y = 0;
  int z = 0;
  friend bool operator==(const Coord&, const Coord&) = default;
};

/// x-fastest layout: index = x + nx * (y + ny * z). Throws kBounds.
std::size_t linear_index(Coord c, const Dims& dims);
Coord coord_of(std::size_t index, const Dims& dims);

inline std::size_t linear_index_unchecked(int x, int y, int z, const Dims& d) {
  return static_cast<std::size_t>(x) +
         static_cast<std::size_t>(d.nx) *
             (static_cast<std::size_t>(y) + static_cast<std::size_t>(d.ny) * z);
}

void require_same_dims(const Dims& a, const Dims& b, const char* what);

/// Dense scalar field with spacing; values are finite and the cached range
/// is always (min, max) of the data.
class Volume {
 public:
  Volume() = default;
  Volume(Dims dims, Spacing spacing, std::vector<float> data);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::span<const float> data() const { return data_; }
  float operator[](std::size_t i) const { return data_[i]; }
  float at(int x, int y, int z) const {
    return data_[linear_index_unchecked(x, y, z, dims_)];
  }
  float lo() const { return range_[0]; }
  float hi() const { return range_[1]; }
  std::size_t size() const { return data_.size(); }

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<float> data_;
  std::array<float, 2> range_{0.0f, 0.0f};
};

/// Affine rescale to [0, 1]; a constant volume maps to all zeros.
Volume normalize_volume(const Volume& v);

enum class Label : std::uint8_t { kBackground = 0, kForeground = 1 };

struct LabelMap {
  Dims dims;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  explicit LabelMap(Dims d, std::uint8_t fill = 0)
      : dims(d), labels(d.size(), fill) {}
  LabelMap(Dims d, std::vector<std::uint8_t> l);

  std::size_t count_foreground() const;
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Per-voxel foreground probability in [0, 1].
struct ProbMap {
  Dims dims;
  std::vector<float> prob;

  ProbMap() = default;
  explicit ProbMap(Dims d, float fill = 0.5f) : dims(d), prob(d.size(), fill) {}
  ProbMap(Dims d, std::vector<float> p);

  LabelMap argmax() const;
};

/// Sparse user corrections. Foreground and background stay disjoint: adding
/// a voxel to one class removes it from the other (last write wins).
class ScribbleSet {
 public:
  ScribbleSet() = default;
  explicit ScribbleSet(Dims dims) : dims_(dims) {}

  void add(std::size_t index, Label label);
  void add(Coord c, Label label) { add(linear_index(c, dims_), label); }
  bool remove(std::size_t index);
  void merge(const ScribbleSet& other);
  void clear();

  std::optional<Label> label_at(std::size_t index) const;
  bool contains(std::size_t index) const { return label_at(index).has_value(); }

  const std::set<std::size_t>& foreground() const { return fg_; }
  const std::set<std::size_t>& background() const { return bg_; }
  /// Union of both classes in ascending index order.
  std::vector<std::size_t> all() const;
  std::size_t size() const { return fg_.size() + bg_.size(); }
  bool empty() const { return fg_.empty() && bg_.empty(); }
  const Dims& dims() const { return dims_; }

  friend bool operator==(const ScribbleSet&, const ScribbleSet&) = default;

 private:
  Dims dims_;
  std::set<std::size_t> fg_;
  std::set<std::size_t> bg_;
};

}  // namespace monetseg
