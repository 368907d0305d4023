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

#include <cstddef>
#include <vector>

#include "monetseg/volume.hpp"

namespace monetseg {

struct GraphCutConfig {
  double lambda = 2.5;
  double sigma = 0.15;
  int connectivity = 6;
  double prob_floor = 1e-6;

  void validate() const;
};

/// Max-flow on a sparse directed graph with source/sink terminal links,
/// solved by the search-tree-reuse augmenting path algorithm
/// (Boykov-Kolmogorov). Deterministic: active nodes and orphans are processed
/// FIFO, and each adjacency list is walked newest arc first.
class MaxFlowGraph {
 public:
  explicit MaxFlowGraph(std::size_t nodes);

  /// Adds capacity from the source to `i` and from `i` to the sink.
  void add_tweights(std::size_t i, double cap_source, double cap_sink);
  /// Adds arc i->j with capacity `cap` and j->i with `rev_cap`.
  void add_edge(std::size_t i, std::size_t j, double cap, double rev_cap);

  double maxflow();
  /// True when node i ends on the source side of the minimum cut.
  bool source_side(std::size_t i) const;
  std::size_t node_count() const { return nodes_.size(); }

 private:
  static constexpr int kNone = -1;
  static constexpr int kTerminal = -2;
  static constexpr int kOrphan = -3;

  struct Arc {
    int head;
    int next;
    double r_cap;
  };
  struct Node {
    int first = -1;
    int parent = kNone;
    bool sink = false;
    double tr_cap = 0;
    long ts = 0;
    int dist = 0;
  };

  static int sister(int a) { return a ^ 1; }
  void activate(int i);
  void augment(int middle_arc);
  void adopt(int i);

  std::vector<Node> nodes_;
  std::vector<Arc> arcs_;
  std::vector<char> in_queue_;
  std::vector<int> active_;
  std::size_t active_head_ = 0;
  std::vector<int> orphans_;
  double flow_ = 0;
  double terminal_offset_ = 0;
  long time_ = 0;
};

struct GraphCutResult {
  LabelMap labels;
  double flow = 0;            // max-flow value minus `constant`
  double constant = 0;        // sum over voxels of the smaller terminal cost
  double energy = 0;          // energy_of(labels)
};

/// Minimizes sum_i -log p_i(L_i) + lambda * sum_{6-neighbours} [L_i != L_j]
/// * exp(-(I_i - I_j)^2 / (2 sigma^2)); scribbled voxels are fixed to their
/// class. Probabilities are clamped to [floor, 1 - floor].
GraphCutResult graphcut_solve(const ProbMap& prob, const Volume& v, const ScribbleSet& s,
                              const GraphCutConfig& cfg);
LabelMap graphcut_refine(const ProbMap& prob, const Volume& v, const ScribbleSet& s,
                         const GraphCutConfig& cfg);

double energy_of(const LabelMap& labels, const ProbMap& prob, const Volume& v,
                 const GraphCutConfig& cfg);

/// Count of 6-neighbour pairs with differing labels.
std::size_t label_discontinuities(const LabelMap& labels);

}  // namespace monetseg
