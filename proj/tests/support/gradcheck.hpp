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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace monetseg::testing {

struct GradCheck {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose step crosses a ReLU kink
};

/// |a - n| / max(|a|, |n|, floor); the floor keeps vanishing gradients from
/// turning roundoff into huge relative errors.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences of `loss` over every coordinate of `params` against
/// `analytic`. When `pattern` is given (the on/off state of every ReLU),
/// coordinates whose +-h steps change the pattern are skipped: the loss is
/// not differentiable across that step.
inline GradCheck check_gradient(std::span<double> params, std::span<const double> analytic,
                                const std::function<double()>& loss, double h = 1e-3,
                                const std::function<std::vector<std::uint8_t>()>& pattern = {}) {
  GradCheck out;
  std::vector<std::uint8_t> base;
  if (pattern) base = pattern();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    const bool up_same = !pattern || pattern() == base;
    params[i] = saved - h;
    const double down = loss();
    const bool down_same = !pattern || pattern() == base;
    params[i] = saved;
    if (!up_same || !down_same) {
      ++out.skipped;
      continue;
    }
    const double numeric = (up - down) / (2 * h);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[i], numeric));
    ++out.checked;
  }
  return out;
}

}  // namespace monetseg::testing
