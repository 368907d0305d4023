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

#include "monetseg/scribbler.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>

#include "monetseg/error.hpp"
#include "monetseg/metrics.hpp"
#include "monetseg/rng.hpp"

namespace monetseg {

namespace {

constexpr int kMaxPlacementAttempts = 1000;

struct Blob {
  double cx, cy, cz;
  double rx, ry, rz;
};

double bounding_radius(const Blob& b) { return std::max({b.rx, b.ry, b.rz}); }

std::vector<std::uint8_t> to_mask(const LabelMap& m) {
  std::vector<std::uint8_t> out(m.labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.labels[i] != 0;
  return out;
}

// Euclidean distance in voxels from each voxel to the nearest voxel where
// mask == want.
std::vector<double> distance_to(const std::vector<std::uint8_t>& mask, std::uint8_t want,
                                const Dims& dims) {
  std::vector<std::uint8_t> feat(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) feat[i] = mask[i] == want;
  auto d = squared_distance_transform(feat, dims, Spacing{});
  for (auto& x : d) x = std::sqrt(x);
  return d;
}

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

constexpr int kAxis[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};

}  // namespace

void PhantomSpec::validate() const {
  if (!dims.valid()) throw Error(ErrorKind::kConfig, "phantom dims must be positive");
  if (blobs < 0) throw Error(ErrorKind::kConfig, "blob count must be >= 0");
  if (!(radius_min > 0) || !(radius_max >= radius_min)) {
    throw Error(ErrorKind::kConfig, "radius range must satisfy 0 < min <= max");
  }
  if (!(contrast > 0 && contrast <= 1)) throw Error(ErrorKind::kConfig, "contrast must be in (0, 1]");
  if (!(noise_std >= 0) || !std::isfinite(noise_std)) {
    throw Error(ErrorKind::kConfig, "noise std must be >= 0");
  }
  if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0)) {
    throw Error(ErrorKind::kConfig, "spacing must be positive");
  }
}

Phantom make_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Dims& d = spec.dims;
  Rng geo = Rng(spec.seed).fork(1);
  Rng noise = Rng(spec.seed).fork(2);

  std::vector<Blob> blobs;
  for (int b = 0; b < spec.blobs; ++b) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      Blob blob{};
      blob.rx = geo.uniform(spec.radius_min, spec.radius_max);
      blob.ry = geo.uniform(spec.radius_min, spec.radius_max);
      blob.rz = geo.uniform(spec.radius_min, spec.radius_max);
      auto centre = [&](double r, int n) -> std::optional<double> {
        const double lo = r, hi = n - 1 - r;
        if (hi < lo) return std::nullopt;
        return geo.uniform(lo, hi);
      };
      const auto cx = centre(blob.rx, d.nx);
      const auto cy = centre(blob.ry, d.ny);
      const auto cz = centre(blob.rz, d.nz);
      if (!cx || !cy || !cz) continue;
      blob.cx = *cx;
      blob.cy = *cy;
      blob.cz = *cz;
      placed = std::all_of(blobs.begin(), blobs.end(), [&](const Blob& o) {
        const double dist = std::hypot(blob.cx - o.cx, blob.cy - o.cy, blob.cz - o.cz);
        return dist >= bounding_radius(blob) + bounding_radius(o) + 1.0;
      });
      if (placed) blobs.push_back(blob);
    }
    if (!placed) {
      throw Error(ErrorKind::kConfig, "could not place blob " + std::to_string(b) + " after " +
                                          std::to_string(kMaxPlacementAttempts) + " attempts");
    }
  }

  LabelMap truth{d, std::vector<std::uint8_t>(d.size(), 0)};
  for (const auto& b : blobs) {
    for (int z = 0; z < d.nz; ++z) {
      for (int y = 0; y < d.ny; ++y) {
        for (int x = 0; x < d.nx; ++x) {
          const double ex = (x - b.cx) / b.rx, ey = (y - b.cy) / b.ry, ez = (z - b.cz) / b.rz;
          if (ex * ex + ey * ey + ez * ez <= 1.0) truth.labels[linear_index_unchecked(x, y, z, d)] = 1;
        }
      }
    }
  }

  const double bg = (1.0 - spec.contrast) / 2.0;
  std::vector<float> data(d.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double base = truth.labels[i] ? bg + spec.contrast : bg;
    data[i] = static_cast<float>(base + spec.noise_std * noise.normal());
  }
  return Phantom{Volume(d, spec.spacing, std::move(data)), std::move(truth)};
}

void CorruptionSpec::validate() const {
  if (!std::isfinite(amplitude)) throw Error(ErrorKind::kConfig, "amplitude must be finite");
  if (!(drop_probability >= 0 && drop_probability <= 1)) {
    throw Error(ErrorKind::kConfig, "drop probability must be in [0, 1]");
  }
  if (false_positive_blobs < 0) throw Error(ErrorKind::kConfig, "false-positive count must be >= 0");
  if (!(false_positive_radius > 0)) throw Error(ErrorKind::kConfig, "false-positive radius must be > 0");
  if (!(temperature > 0)) throw Error(ErrorKind::kConfig, "temperature must be > 0");
}

Corruption corrupt_segmentation(const LabelMap& truth, const CorruptionSpec& spec) {
  spec.validate();
  const Dims& d = truth.dims;
  Rng rng(spec.seed);
  std::vector<std::uint8_t> mask = to_mask(truth);

  if (spec.drop_probability > 0) {
    const auto [comp, sizes] = connected_components(mask, d);
    std::vector<char> drop(sizes.size());
    for (auto& x : drop) x = rng.uniform() < spec.drop_probability;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (comp[i] >= 0 && drop[static_cast<std::size_t>(comp[i])]) mask[i] = 0;
    }
  }

  if (spec.amplitude > 0) {
    const auto depth = distance_to(mask, 0, d);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = mask[i] && depth[i] > spec.amplitude;
  } else if (spec.amplitude < 0) {
    const auto reach = distance_to(mask, 1, d);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = mask[i] || reach[i] <= -spec.amplitude;
  }

  // False positives go where the truth is background, clear of any object.
  if (spec.false_positive_blobs > 0) {
    const auto clearance = distance_to(to_mask(truth), 1, d);
    const double r = spec.false_positive_radius;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < clearance.size(); ++i) {
      const Coord c = coord_of(i, d);
      const bool inside = c.x >= r && c.y >= r && c.z >= r && c.x <= d.nx - 1 - r &&
                          c.y <= d.ny - 1 - r && c.z <= d.nz - 1 - r;
      if (inside && clearance[i] > r + 1) candidates.push_back(i);
    }
    for (int b = 0; b < spec.false_positive_blobs && !candidates.empty(); ++b) {
      const Coord c = coord_of(candidates[rng.below(candidates.size())], d);
      const int ri = static_cast<int>(std::ceil(r));
      for (int dz = -ri; dz <= ri; ++dz) {
        for (int dy = -ri; dy <= ri; ++dy) {
          for (int dx = -ri; dx <= ri; ++dx) {
            if (dx * dx + dy * dy + dz * dz > r * r) continue;
            const int x = c.x + dx, y = c.y + dy, z = c.z + dz;
            if (d.contains(x, y, z)) mask[linear_index_unchecked(x, y, z, d)] = 1;
          }
        }
      }
    }
  }

  const auto to_bg = distance_to(mask, 0, d);
  const auto to_fg = distance_to(mask, 1, d);
  std::vector<float> prob(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    // Boundary voxels sit half a voxel from the interface.
    const double s = mask[i] ? to_bg[i] - 0.5 : -(to_fg[i] - 0.5);
    prob[i] = static_cast<float>(1.0 / (1.0 + std::exp(-s / spec.temperature)));
  }
  LabelMap seg{d, std::move(mask)};
  const double score = dice(truth, seg);
  return Corruption{std::move(seg), ProbMap{d, std::move(prob)}, score};
}

Corruption calibrate_corruption(const LabelMap& truth, CorruptionSpec spec, double lo, double hi,
                                CorruptionSpec* chosen) {
  const std::uint64_t base_seed = spec.seed;
  for (std::uint64_t attempt = 0; attempt < 16; ++attempt) {
    spec.seed = base_seed + attempt;
    for (int step = 0; step <= 24; ++step) {
      spec.amplitude = 0.25 * step;
      Corruption c = corrupt_segmentation(truth, spec);
      if (c.dice >= lo && c.dice <= hi) {
        if (chosen) *chosen = spec;
        return c;
      }
      if (c.dice < lo) break;  // Dice only falls as erosion grows
    }
  }
  throw Error(ErrorKind::kConfig, "no corruption setting reaches the requested Dice band");
}

void ScribblerConfig::validate() const {
  if (max_per_round < 0) throw Error(ErrorKind::kConfig, "max scribbles per round must be >= 0");
  if (min_length < 1 || max_length < min_length) {
    throw Error(ErrorKind::kConfig, "scribble length range must satisfy 1 <= min <= max");
  }
}

ScribblerConfig parse_scribbler_config(std::string_view text, ScribblerConfig cfg) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (strip(line).empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "scribbler config line " + std::to_string(line_no);
    if (eq == std::string::npos) throw Error(ErrorKind::kConfig, where + ": expected key = value");
    const std::string key = strip(line.substr(0, eq));
    const std::string val = strip(line.substr(eq + 1));
    try {
      if (key == "max_per_round") cfg.max_per_round = std::stoi(val);
      else if (key == "min_component") cfg.min_component = std::stoull(val);
      else if (key == "min_length") cfg.min_length = std::stoi(val);
      else if (key == "max_length") cfg.max_length = std::stoi(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else throw Error(ErrorKind::kConfig, where + ": unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::kConfig, where + ": bad value for '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

std::pair<std::vector<int>, std::vector<std::size_t>> connected_components(
    const std::vector<std::uint8_t>& mask, const Dims& d) {
  std::vector<int> comp(mask.size(), -1);
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < mask.size(); ++seed) {
    if (!mask[seed] || comp[seed] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    std::size_t count = 0;
    comp[seed] = id;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++count;
      const Coord c = coord_of(i, d);
      for (const auto& o : kAxis) {
        const int x = c.x + o[0], y = c.y + o[1], z = c.z + o[2];
        if (!d.contains(x, y, z)) continue;
        const std::size_t j = linear_index_unchecked(x, y, z, d);
        if (mask[j] && comp[j] < 0) {
          comp[j] = id;
          stack.push_back(j);
        }
      }
    }
    sizes.push_back(count);
  }
  return {std::move(comp), std::move(sizes)};
}

ScribbleSet synthesize_scribbles(const LabelMap& pred, const LabelMap& truth,
                                 const ScribblerConfig& cfg, const ScribbleSet& existing) {
  cfg.validate();
  require_same_dims(pred.dims, truth.dims, "synthesize_scribbles");
  require_same_dims(pred.dims, existing.dims(), "synthesize_scribbles");
  const Dims& d = pred.dims;
  ScribbleSet out(d);

  // False negatives and false positives are separated so each component has
  // a single true class.
  std::vector<std::uint8_t> err(d.size(), 0);
  for (std::size_t i = 0; i < err.size(); ++i) {
    if (pred.labels[i] != truth.labels[i] && !existing.contains(i)) err[i] = truth.labels[i] ? 1 : 2;
  }
  std::vector<std::uint8_t> fn(d.size()), fp(d.size());
  for (std::size_t i = 0; i < err.size(); ++i) {
    fn[i] = err[i] == 1;
    fp[i] = err[i] == 2;
  }
  auto [comp_fn, size_fn] = connected_components(fn, d);
  auto [comp_fp, size_fp] = connected_components(fp, d);
  const int n_fn = static_cast<int>(size_fn.size());
  std::vector<int> comp(d.size(), -1);
  std::vector<std::size_t> sizes = size_fn;
  sizes.insert(sizes.end(), size_fp.begin(), size_fp.end());
  for (std::size_t i = 0; i < comp.size(); ++i) {
    if (comp_fn[i] >= 0) comp[i] = comp_fn[i];
    else if (comp_fp[i] >= 0) comp[i] = comp_fp[i] + n_fn;
  }

  std::vector<int> order;
  for (int c = 0; c < static_cast<int>(sizes.size()); ++c) {
    if (sizes[static_cast<std::size_t>(c)] >= cfg.min_component) order.push_back(c);
  }
  if (order.empty() || cfg.max_per_round == 0) return out;

  // Erosion depth (city-block steps to the component boundary); the grid
  // border does not count as boundary.
  std::vector<int> depth(d.size(), -1);
  std::vector<std::size_t> frontier;
  for (std::size_t i = 0; i < comp.size(); ++i) {
    if (comp[i] < 0) continue;
    const Coord c = coord_of(i, d);
    for (const auto& o : kAxis) {
      const int x = c.x + o[0], y = c.y + o[1], z = c.z + o[2];
      if (d.contains(x, y, z) && comp[linear_index_unchecked(x, y, z, d)] != comp[i]) {
        depth[i] = 0;
        frontier.push_back(i);
        break;
      }
    }
  }
  for (std::size_t head = 0; head < frontier.size(); ++head) {
    const std::size_t i = frontier[head];
    const Coord c = coord_of(i, d);
    for (const auto& o : kAxis) {
      const int x = c.x + o[0], y = c.y + o[1], z = c.z + o[2];
      if (!d.contains(x, y, z)) continue;
      const std::size_t j = linear_index_unchecked(x, y, z, d);
      if (comp[j] == comp[i] && depth[j] < 0) {
        depth[j] = depth[i] + 1;
        frontier.push_back(j);
      }
    }
  }

  std::vector<std::size_t> anchor(sizes.size(), 0);
  std::vector<int> best(sizes.size(), -2);
  for (std::size_t i = 0; i < comp.size(); ++i) {
    if (comp[i] < 0) continue;
    const auto c = static_cast<std::size_t>(comp[i]);
    // Components that never touch another label keep depth -1; treat as 0.
    const int dep = std::max(depth[i], 0);
    if (dep > best[c]) {
      best[c] = dep;
      anchor[c] = i;
    }
  }

  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return sizes[static_cast<std::size_t>(a)] > sizes[static_cast<std::size_t>(b)];
  });
  if (order.size() > static_cast<std::size_t>(cfg.max_per_round)) {
    order.resize(static_cast<std::size_t>(cfg.max_per_round));
  }

  Rng rng = Rng(cfg.seed).fork(existing.size());
  for (int c : order) {
    const std::size_t a = anchor[static_cast<std::size_t>(c)];
    const Coord ac = coord_of(a, d);
    const Label label = truth.labels[a] ? Label::kForeground : Label::kBackground;
    const int length = cfg.min_length +
                       static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_length - cfg.min_length + 1)));

    // Longest in-component run through the anchor along each axis.
    auto extent = [&](const int* o) {
      int n = 0;
      for (int x = ac.x + o[0], y = ac.y + o[1], z = ac.z + o[2];
           d.contains(x, y, z) && comp[linear_index_unchecked(x, y, z, d)] == c;
           x += o[0], y += o[1], z += o[2]) {
        ++n;
      }
      return n;
    };
    int axis = 0, best_run = -1;
    int pos_ext = 0, neg_ext = 0;
    for (int ax = 0; ax < 3; ++ax) {
      const int p = extent(kAxis[2 * ax]), n = extent(kAxis[2 * ax + 1]);
      if (p + n > best_run) {
        best_run = p + n;
        axis = ax;
        pos_ext = p;
        neg_ext = n;
      }
    }
    out.add(a, label);
    int placed = 1, up = 0, down = 0;
    while (placed < length && (up < pos_ext || down < neg_ext)) {
      const bool go_up = up < pos_ext && (up <= down || down >= neg_ext);
      const int step = go_up ? ++up : -(++down);
      const int* o = kAxis[2 * axis];
      out.add(Coord{ac.x + o[0] * step, ac.y + o[1] * step, ac.z + o[2] * step}, label);
      ++placed;
    }
  }
  return out;
}

}  // namespace monetseg
