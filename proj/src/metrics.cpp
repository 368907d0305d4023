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

#include "monetseg/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "monetseg/error.hpp"

namespace monetseg {

double dice(const LabelMap& a, const LabelMap& b) {
  require_same_dims(a.dims, b.dims, "dice");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const bool x = a.labels[i] != 0, y = b.labels[i] != 0;
    na += x;
    nb += y;
    inter += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

std::vector<std::size_t> surface_voxels(const LabelMap& m) {
  const Dims& d = m.dims;
  std::vector<std::size_t> out;
  static constexpr int kOff[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0},
                                     {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x) {
        const std::size_t i = linear_index_unchecked(x, y, z, d);
        if (!m.labels[i]) continue;
        for (const auto& o : kOff) {
          const int px = x + o[0], py = y + o[1], pz = z + o[2];
          if (!d.contains(px, py, pz) || !m.labels[linear_index_unchecked(px, py, pz, d)]) {
            out.push_back(i);
            break;
          }
        }
      }
    }
  }
  return out;
}

namespace {

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) along one line.
void edt_line(std::vector<double>& f, std::size_t n, double step, std::vector<double>& out,
              std::vector<int>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0);
  int k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (std::isinf(f[q])) continue;
    const double pq = static_cast<double>(q) * step;
    while (k >= 0) {
      const double pv = v[static_cast<std::size_t>(k)] * step;
      const double s = ((f[q] + pq * pq) - (f[static_cast<std::size_t>(v[static_cast<std::size_t>(k)])] + pv * pv)) /
                       (2 * (pq - pv));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        ++k;
        v[static_cast<std::size_t>(k)] = static_cast<int>(q);
        z[static_cast<std::size_t>(k)] = s;
        z[static_cast<std::size_t>(k) + 1] = inf;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = static_cast<int>(q);
      z[0] = -inf;
      z[1] = inf;
    }
  }
  out.assign(n, inf);
  if (k < 0) return;
  int j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double pq = static_cast<double>(q) * step;
    while (z[static_cast<std::size_t>(j) + 1] < pq) ++j;
    const double pv = v[static_cast<std::size_t>(j)] * step;
    out[q] = (pq - pv) * (pq - pv) + f[static_cast<std::size_t>(v[static_cast<std::size_t>(j)])];
  }
}

}  // namespace

std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& features,
                                               const Dims& d, const Spacing& spacing) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(features.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = features[i] ? 0.0 : inf;
  std::vector<double> line, out, z;
  std::vector<int> v;
  const std::size_t nx = static_cast<std::size_t>(d.nx), ny = static_cast<std::size_t>(d.ny),
                    nz = static_cast<std::size_t>(d.nz);
  auto pass = [&](std::size_t len, std::size_t stride, double step, auto base_of,
                  std::size_t lines) {
    line.resize(len);
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t base = base_of(l);
      for (std::size_t q = 0; q < len; ++q) line[q] = g[base + q * stride];
      edt_line(line, len, step, out, v, z);
      for (std::size_t q = 0; q < len; ++q) g[base + q * stride] = out[q];
    }
  };
  pass(nx, 1, spacing.sx, [&](std::size_t l) { return l * nx; }, ny * nz);
  pass(ny, nx, spacing.sy, [&](std::size_t l) { return (l / nx) * nx * ny + l % nx; }, nx * nz);
  pass(nz, nx * ny, spacing.sz, [&](std::size_t l) { return l; }, nx * ny);
  return g;
}

double assd(const LabelMap& a, const LabelMap& b, const Spacing& spacing, AssdMethod method) {
  require_same_dims(a.dims, b.dims, "assd");
  const auto sa = surface_voxels(a);
  const auto sb = surface_voxels(b);
  if (sa.empty() || sb.empty()) {
    throw Error(ErrorKind::kUndefinedMetric, "assd undefined for an empty mask");
  }
  if (method == AssdMethod::kAuto) {
    method = sa.size() * sb.size() <= 4'000'000 ? AssdMethod::kBruteForce
                                                : AssdMethod::kDistanceTransform;
  }
  double total = 0;
  if (method == AssdMethod::kBruteForce) {
    auto mm = [&](std::size_t i) {
      const Coord c = coord_of(i, a.dims);
      return std::array<double, 3>{c.x * spacing.sx, c.y * spacing.sy, c.z * spacing.sz};
    };
    std::vector<std::array<double, 3>> pa, pb;
    for (auto i : sa) pa.push_back(mm(i));
    for (auto i : sb) pb.push_back(mm(i));
    auto one_way = [](const auto& from, const auto& to) {
      double sum = 0;
      for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) {
          const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
          best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        sum += std::sqrt(best);
      }
      return sum;
    };
    total = one_way(pa, pb) + one_way(pb, pa);
  } else {
    auto one_way = [&](const std::vector<std::size_t>& from, const std::vector<std::size_t>& to) {
      std::vector<std::uint8_t> feat(a.labels.size(), 0);
      for (auto i : to) feat[i] = 1;
      const auto dt = squared_distance_transform(feat, a.dims, spacing);
      double sum = 0;
      for (auto i : from) sum += std::sqrt(dt[i]);
      return sum;
    };
    total = one_way(sa, sb) + one_way(sb, sa);
  }
  return total / static_cast<double>(sa.size() + sb.size());
}

std::string format_report_line(const EvalReport& r, bool has_ground_truth,
                               bool include_timings) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  if (has_ground_truth) {
    j["dice"] = r.dice ? nlohmann::ordered_json(*r.dice) : nlohmann::ordered_json(nullptr);
    j["assd"] = r.assd ? nlohmann::ordered_json(*r.assd) : nlohmann::ordered_json(nullptr);
  }
  j["scribble_voxels"] = r.scribble_voxels;
  const StageTimes t = include_timings ? r.times : StageTimes{};
  j["t_weights"] = t.weights;
  j["t_train"] = t.train;
  j["t_infer"] = t.infer;
  j["t_graphcut"] = t.graphcut;
  return j.dump();
}

}  // namespace monetseg
