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

#include "monetseg/graphcut.hpp"

#include <algorithm>
#include <climits>
#include <cmath>

#include "monetseg/error.hpp"

namespace monetseg {

void GraphCutConfig::validate() const {
  if (!(lambda >= 0)) throw Error(ErrorKind::kConfig, "graphcut lambda must be >= 0");
  if (!(sigma > 0)) throw Error(ErrorKind::kConfig, "graphcut sigma must be positive");
  if (connectivity != 6) throw Error(ErrorKind::kConfig, "graphcut supports 6-connectivity only");
  if (!(prob_floor > 0 && prob_floor < 0.5)) {
    throw Error(ErrorKind::kConfig, "graphcut prob_floor must lie in (0, 0.5)");
  }
}

// ------------------------------------------------------------------ maxflow

MaxFlowGraph::MaxFlowGraph(std::size_t nodes) : nodes_(nodes), in_queue_(nodes, 0) {}

void MaxFlowGraph::add_tweights(std::size_t i, double cap_source, double cap_sink) {
  if (!(cap_source >= 0) || !(cap_sink >= 0) || !std::isfinite(cap_source) ||
      !std::isfinite(cap_sink)) {
    throw Error(ErrorKind::kValidation, "terminal capacities must be finite and >= 0");
  }
  const double delta = nodes_[i].tr_cap;
  if (delta > 0) {
    cap_source += delta;
  } else {
    cap_sink -= delta;
  }
  terminal_offset_ += std::min(cap_source, cap_sink);
  nodes_[i].tr_cap = cap_source - cap_sink;
}

void MaxFlowGraph::add_edge(std::size_t i, std::size_t j, double cap, double rev_cap) {
  if (i == j) throw Error(ErrorKind::kValidation, "self loops are not allowed");
  if (!(cap >= 0) || !(rev_cap >= 0) || !std::isfinite(cap) || !std::isfinite(rev_cap)) {
    throw Error(ErrorKind::kValidation, "edge capacities must be finite and >= 0");
  }
  const int a = static_cast<int>(arcs_.size());
  arcs_.push_back({static_cast<int>(j), nodes_[i].first, cap});
  arcs_.push_back({static_cast<int>(i), nodes_[j].first, rev_cap});
  nodes_[i].first = a;
  nodes_[j].first = a + 1;
}

void MaxFlowGraph::activate(int i) {
  if (!in_queue_[static_cast<std::size_t>(i)]) {
    in_queue_[static_cast<std::size_t>(i)] = 1;
    active_.push_back(i);
  }
}

void MaxFlowGraph::augment(int middle) {
  double bottleneck = arcs_[middle].r_cap;
  // source half: walk from the tail of the middle arc up to the source
  int i = arcs_[sister(middle)].head;
  for (int a = nodes_[i].parent; a != kTerminal; a = nodes_[i].parent) {
    bottleneck = std::min(bottleneck, arcs_[sister(a)].r_cap);
    i = arcs_[a].head;
  }
  bottleneck = std::min(bottleneck, nodes_[i].tr_cap);
  // sink half
  i = arcs_[middle].head;
  for (int a = nodes_[i].parent; a != kTerminal; a = nodes_[i].parent) {
    bottleneck = std::min(bottleneck, arcs_[a].r_cap);
    i = arcs_[a].head;
  }
  bottleneck = std::min(bottleneck, -nodes_[i].tr_cap);

  arcs_[sister(middle)].r_cap += bottleneck;
  arcs_[middle].r_cap -= bottleneck;

  auto orphan = [this](int n) {
    nodes_[n].parent = kOrphan;
    orphans_.push_back(n);
  };
  i = arcs_[sister(middle)].head;
  for (int a = nodes_[i].parent; a != kTerminal; a = nodes_[i].parent) {
    arcs_[a].r_cap += bottleneck;
    arcs_[sister(a)].r_cap -= bottleneck;
    const int next = arcs_[a].head;
    if (arcs_[sister(a)].r_cap <= 0) orphan(i);
    i = next;
  }
  nodes_[i].tr_cap -= bottleneck;
  if (nodes_[i].tr_cap <= 0) orphan(i);

  i = arcs_[middle].head;
  for (int a = nodes_[i].parent; a != kTerminal; a = nodes_[i].parent) {
    arcs_[sister(a)].r_cap += bottleneck;
    arcs_[a].r_cap -= bottleneck;
    const int next = arcs_[a].head;
    if (arcs_[a].r_cap <= 0) orphan(i);
    i = next;
  }
  nodes_[i].tr_cap += bottleneck;
  if (nodes_[i].tr_cap >= 0) orphan(i);

  flow_ += bottleneck;
}

void MaxFlowGraph::adopt(int i) {
  Node& n = nodes_[i];
  const bool sink = n.sink;
  int best_arc = kNone;
  int best_d = INT_MAX;
  for (int a = n.first; a != -1; a = arcs_[a].next) {
    const double residual = sink ? arcs_[a].r_cap : arcs_[sister(a)].r_cap;
    const int j = arcs_[a].head;
    if (residual <= 0 || nodes_[j].parent == kNone || nodes_[j].sink != sink) continue;
    // Trace j back to a terminal; distances are cached per time stamp.
    int d = 0;
    int k = j;
    bool rooted = false;
    while (true) {
      if (nodes_[k].ts == time_) {
        d += nodes_[k].dist;
        rooted = true;
        break;
      }
      const int pa = nodes_[k].parent;
      ++d;
      if (pa == kTerminal) {
        nodes_[k].ts = time_;
        nodes_[k].dist = 1;
        rooted = true;
        break;
      }
      if (pa == kOrphan || pa == kNone) break;
      k = arcs_[pa].head;
    }
    if (!rooted) continue;
    if (d < best_d) {
      best_d = d;
      best_arc = a;
    }
    for (k = j; nodes_[k].ts != time_; k = arcs_[nodes_[k].parent].head) {
      nodes_[k].ts = time_;
      nodes_[k].dist = d--;
    }
  }
  if (best_arc != kNone) {
    n.parent = best_arc;
    n.ts = time_;
    n.dist = best_d + 1;
    return;
  }
  // No valid parent: i becomes free and its children become orphans.
  for (int a = n.first; a != -1; a = arcs_[a].next) {
    const int j = arcs_[a].head;
    Node& nj = nodes_[j];
    if (nj.parent == kNone || nj.sink != sink) continue;
    const double residual = sink ? arcs_[a].r_cap : arcs_[sister(a)].r_cap;
    if (residual > 0) activate(j);
    if (nj.parent != kTerminal && nj.parent != kOrphan && arcs_[nj.parent].head == i) {
      nj.parent = kOrphan;
      orphans_.push_back(j);
    }
  }
  n.parent = kNone;
}

double MaxFlowGraph::maxflow() {
  active_.clear();
  active_head_ = 0;
  std::fill(in_queue_.begin(), in_queue_.end(), 0);
  for (std::size_t u = 0; u < nodes_.size(); ++u) {
    Node& n = nodes_[u];
    n.ts = 0;
    n.dist = 1;
    if (n.tr_cap > 0) {
      n.sink = false;
      n.parent = kTerminal;
      activate(static_cast<int>(u));
    } else if (n.tr_cap < 0) {
      n.sink = true;
      n.parent = kTerminal;
      activate(static_cast<int>(u));
    } else {
      n.parent = kNone;
    }
  }
  while (true) {
    int i = kNone;
    while (active_head_ < active_.size()) {
      const int cand = active_[active_head_++];
      in_queue_[static_cast<std::size_t>(cand)] = 0;
      if (nodes_[cand].parent != kNone) {
        i = cand;
        break;
      }
    }
    if (i == kNone) break;
    if (active_head_ > 4096 && active_head_ * 2 > active_.size()) {
      active_.erase(active_.begin(), active_.begin() + static_cast<long>(active_head_));
      active_head_ = 0;
    }

    int middle = kNone;
    const bool sink = nodes_[i].sink;
    for (int a = nodes_[i].first; a != -1; a = arcs_[a].next) {
      const int j = arcs_[a].head;
      const double residual = sink ? arcs_[sister(a)].r_cap : arcs_[a].r_cap;
      if (residual <= 0) continue;
      Node& nj = nodes_[j];
      if (nj.parent == kNone) {
        nj.sink = sink;
        nj.parent = sister(a);
        nj.ts = nodes_[i].ts;
        nj.dist = nodes_[i].dist + 1;
        activate(j);
      } else if (nj.sink != sink) {
        middle = sink ? sister(a) : a;
        break;
      }
    }
    if (middle == kNone) continue;

    activate(i);  // i may still have unexplored neighbours
    ++time_;
    augment(middle);
    for (std::size_t o = 0; o < orphans_.size(); ++o) adopt(orphans_[o]);
    orphans_.clear();
  }
  return flow_ + terminal_offset_;
}

bool MaxFlowGraph::source_side(std::size_t i) const {
  return nodes_[i].parent != kNone && !nodes_[i].sink;
}

// ----------------------------------------------------------------- energy

namespace {

struct Unary {
  double fg;  // cost of labelling foreground: -log p
  double bg;  // cost of labelling background: -log(1 - p)
};

Unary unary(float p, double floor) {
  const double q = std::clamp(static_cast<double>(p), floor, 1.0 - floor);
  return {-std::log(q), -std::log(1.0 - q)};
}

double pair_weight(float a, float b, const GraphCutConfig& cfg) {
  const double d = static_cast<double>(a) - static_cast<double>(b);
  return cfg.lambda * std::exp(-(d * d) / (2.0 * cfg.sigma * cfg.sigma));
}

template <class Fn>
void for_each_pair(const Dims& d, Fn&& fn) {
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x) {
        const std::size_t i = linear_index_unchecked(x, y, z, d);
        if (x + 1 < d.nx) fn(i, i + 1);
        if (y + 1 < d.ny) fn(i, i + static_cast<std::size_t>(d.nx));
        if (z + 1 < d.nz) fn(i, i + static_cast<std::size_t>(d.nx) * d.ny);
      }
    }
  }
}

}  // namespace

double energy_of(const LabelMap& labels, const ProbMap& prob, const Volume& v,
                 const GraphCutConfig& cfg) {
  cfg.validate();
  require_same_dims(labels.dims, prob.dims, "energy_of");
  require_same_dims(labels.dims, v.dims(), "energy_of");
  double e = 0;
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    const Unary u = unary(prob.prob[i], cfg.prob_floor);
    e += labels.labels[i] ? u.fg : u.bg;
  }
  double pairwise = 0;
  for_each_pair(labels.dims, [&](std::size_t i, std::size_t j) {
    if (labels.labels[i] != labels.labels[j]) pairwise += pair_weight(v[i], v[j], cfg);
  });
  return e + pairwise;
}

std::size_t label_discontinuities(const LabelMap& labels) {
  std::size_t n = 0;
  for_each_pair(labels.dims, [&](std::size_t i, std::size_t j) {
    n += labels.labels[i] != labels.labels[j];
  });
  return n;
}

GraphCutResult graphcut_solve(const ProbMap& prob, const Volume& v, const ScribbleSet& s,
                              const GraphCutConfig& cfg) {
  cfg.validate();
  require_same_dims(prob.dims, v.dims(), "graphcut");
  require_same_dims(prob.dims, s.dims(), "graphcut");
  const Dims& d = v.dims();
  const std::size_t n = v.size();
  MaxFlowGraph graph(n);

  double total = 1.0;
  if (cfg.lambda > 0) {
    for_each_pair(d, [&](std::size_t i, std::size_t j) {
      const double w = pair_weight(v[i], v[j], cfg);
      graph.add_edge(i, j, w, w);
      total += 2 * w;
    });
  }
  std::vector<Unary> unaries(n);
  for (std::size_t i = 0; i < n; ++i) {
    unaries[i] = unary(prob.prob[i], cfg.prob_floor);
    total += std::max(unaries[i].fg, unaries[i].bg);
  }
  // Exceeds any finite cut, so scribbled voxels never change side.
  const double hard = total;

  GraphCutResult r;
  for (std::size_t i = 0; i < n; ++i) {
    const auto fixed = s.label_at(i);
    if (fixed == Label::kForeground) {
      graph.add_tweights(i, hard, 0);
    } else if (fixed == Label::kBackground) {
      graph.add_tweights(i, 0, hard);
    } else {
      // source side = foreground; the cut pays cap_source for background
      graph.add_tweights(i, unaries[i].bg, unaries[i].fg);
      r.constant += std::min(unaries[i].bg, unaries[i].fg);
    }
  }
  r.flow = graph.maxflow() - r.constant;
  r.labels = LabelMap(d);
  for (std::size_t i = 0; i < n; ++i) r.labels.labels[i] = graph.source_side(i) ? 1 : 0;
  r.energy = energy_of(r.labels, prob, v, cfg);
  return r;
}

LabelMap graphcut_refine(const ProbMap& prob, const Volume& v, const ScribbleSet& s,
                         const GraphCutConfig& cfg) {
  return graphcut_solve(prob, v, s, cfg).labels;
}

}  // namespace monetseg
