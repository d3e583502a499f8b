// Copyright 2026 The PlayMimic Authors
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

// Test-only finite-difference oracle. Independent of the autodiff backward
// path: it re-runs forward passes with perturbed parameters.

#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "playmimic/graph.hpp"
#include "playmimic/nn.hpp"

namespace playmimic::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_param;
  int64_t checked = 0;
};

// build must construct a scalar loss from current parameter values.
// Checks every coordinate by default; set stride > 1 to subsample.
// Coordinates with both gradients below atol_floor are compared at that
// scale: central differences of near-zero derivatives are cancellation noise.
// A coordinate whose estimate disagrees at the base step is rechecked at
// smaller steps: a relu/clamp kink inside the difference window shrinks away,
// a wrong analytic gradient does not.
template <typename BuildFn>
GradCheckResult gradcheck(ParamStoreT<double>& ps, BuildFn build, double h = 1e-3,
                          int64_t stride = 1, double atol_floor = 1e-6) {
  // Analytic pass.
  ps.zero_grads();
  {
    GraphT<double> g(true);
    auto loss = build(g);
    g.backward(loss);
  }
  GradCheckResult res;
  auto eval = [&]() {
    GraphT<double> g(false);
    auto loss = build(g);
    return g.val(loss)[0];
  };
  for (auto& [name, e] : ps.entries()) {
    for (int64_t i = 0; i < e.value.numel(); i += stride) {
      double keep = e.value[i];
      double rel = 0, abs_err = 0;
      for (double step : {h, h / 10, h / 100}) {
        e.value[i] = keep + step;
        double fp = eval();
        e.value[i] = keep - step;
        double fm = eval();
        e.value[i] = keep;
        double num = (fp - fm) / (2 * step);
        double ana = e.grad[i];
        abs_err = std::fabs(num - ana);
        rel = abs_err / std::max({std::fabs(num), std::fabs(ana), atol_floor});
        if (rel < 1e-4) break;
      }
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = name + "[" + std::to_string(i) + "]";
      }
      res.max_abs_err = std::max(res.max_abs_err, abs_err);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace playmimic::testing
