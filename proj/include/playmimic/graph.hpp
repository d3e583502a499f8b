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

#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "playmimic/error.hpp"
#include "playmimic/gemm.hpp"
#include "playmimic/parallel.hpp"
#include "playmimic/rng.hpp"
#include "playmimic/tensor.hpp"

namespace playmimic {

// Reverse-mode autodiff over a tape of tensor ops. A graph instance covers one
// forward pass; backward() accumulates into externally bound parameter grads.
// Construction order is topological, so the reverse sweep is a plain reverse
// iteration. With grad disabled no backward closures are stored.
template <typename T>
class GraphT {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  explicit GraphT(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  // ---- leaves ----

  Var input(TensorT<T> value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = false;
    return push(std::move(n));
  }

  Var param(TensorT<T>* value, TensorT<T>* grad) {
    Node n;
    n.ext_value = value;
    n.ext_grad = grad;
    n.needs_grad = grad_enabled_;
    return push(std::move(n));
  }

  const TensorT<T>& val(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    return n.ext_value ? *n.ext_value : n.value;
  }

  const TensorT<T>& grad_of(Var v) const { return nodes_[static_cast<size_t>(v.id)].grad; }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    const T* pb = val(b).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
    return unary_binary(std::move(out), a, b, [](GraphT& g, int id, int ia, int ib) {
      const TensorT<T>& go = g.node(id).grad;
      g.accum_eq(ia, go);
      g.accum_eq(ib, go);
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    const T* pb = val(b).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
    return unary_binary(std::move(out), a, b, [](GraphT& g, int id, int ia, int ib) {
      const TensorT<T>& go = g.node(id).grad;
      g.accum_eq(ia, go);
      g.accum_map(ib, go, [](T x) { return -x; });
    });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    const T* pb = val(b).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
    return unary_binary(std::move(out), a, b, [](GraphT& g, int id, int ia, int ib) {
      const TensorT<T>& go = g.node(id).grad;
      if (g.needs(ia)) {
        const T* gb = g.val(Var{ib}).data();
        g.accum_idx(ia, [&](int64_t i) { return go[i] * gb[i]; });
      }
      if (g.needs(ib)) {
        const T* ga = g.val(Var{ia}).data();
        g.accum_idx(ib, [&](int64_t i) { return go[i] * ga[i]; });
      }
    });
  }

  Var div(Var a, Var b) {
    check_same(a, b, "div");
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    const T* pb = val(b).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] / pb[i];
    return unary_binary(std::move(out), a, b, [](GraphT& g, int id, int ia, int ib) {
      const TensorT<T>& go = g.node(id).grad;
      const T* pb2 = g.val(Var{ib}).data();
      const T* py = g.val(Var{id}).data();
      if (g.needs(ia)) g.accum_idx(ia, [&](int64_t i) { return go[i] / pb2[i]; });
      if (g.needs(ib)) g.accum_idx(ib, [&](int64_t i) { return -go[i] * py[i] / pb2[i]; });
    });
  }

  Var scale(Var a, T c) {
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = c * pa[i];
    return unary(std::move(out), a, [c](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      g.accum_map(ia, go, [c](T x) { return c * x; });
    });
  }

  Var add_const(Var a, T c) {
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + c;
    return unary(std::move(out), a, [](GraphT& g, int id, int ia) {
      g.accum_eq(ia, g.node(id).grad);
    });
  }

  Var relu(Var a) {
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
    return unary(std::move(out), a, [](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      const T* px = g.val(Var{ia}).data();
      g.accum_idx(ia, [&](int64_t i) { return px[i] > T(0) ? go[i] : T(0); });
    });
  }

  Var softplus(Var a) {
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) {
      T x = pa[i];
      po[i] = x > T(20) ? x : std::log1p(std::exp(x));
    }
    return unary(std::move(out), a, [](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      const T* px = g.val(Var{ia}).data();
      g.accum_idx(ia, [&](int64_t i) {
        T s = T(1) / (T(1) + std::exp(-px[i]));
        return go[i] * s;
      });
    });
  }

  Var sigmoid(Var a) {
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = T(1) / (T(1) + std::exp(-pa[i]));
    return unary(std::move(out), a, [](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      const T* py = g.val(Var{id}).data();
      g.accum_idx(ia, [&](int64_t i) { return go[i] * py[i] * (T(1) - py[i]); });
    });
  }

  Var tanh_op(Var a) {
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = std::tanh(pa[i]);
    return unary(std::move(out), a, [](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      const T* py = g.val(Var{id}).data();
      g.accum_idx(ia, [&](int64_t i) { return go[i] * (T(1) - py[i] * py[i]); });
    });
  }

  Var exp_op(Var a) {
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = std::exp(pa[i]);
    return unary(std::move(out), a, [](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      const T* py = g.val(Var{id}).data();
      g.accum_idx(ia, [&](int64_t i) { return go[i] * py[i]; });
    });
  }

  Var log_op(Var a) {
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = std::log(pa[i]);
    return unary(std::move(out), a, [](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      const T* px = g.val(Var{ia}).data();
      g.accum_idx(ia, [&](int64_t i) { return go[i] / px[i]; });
    });
  }

  Var square(Var a) {
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pa[i];
    return unary(std::move(out), a, [](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      const T* px = g.val(Var{ia}).data();
      g.accum_idx(ia, [&](int64_t i) { return T(2) * go[i] * px[i]; });
    });
  }

  Var clamp_min(Var a, T c) {
    TensorT<T> out(val(a).shape());
    const T* pa = val(a).data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] > c ? pa[i] : c;
    return unary(std::move(out), a, [c](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      const T* px = g.val(Var{ia}).data();
      g.accum_idx(ia, [&](int64_t i) { return px[i] > c ? go[i] : T(0); });
    });
  }

  // ---- shape ----

  Var reshape(Var a, std::vector<int> shape) {
    TensorT<T> out = val(a).reshaped(std::move(shape));
    return unary(std::move(out), a, [](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      g.accum_eq(ia, go);
    });
  }

  Var transpose2d(Var a) {
    const TensorT<T>& x = val(a);
    require(x.ndim() == 2, Err::ShapeMismatch, "transpose2d wants 2-d");
    int m = x.dim(0), n = x.dim(1);
    TensorT<T> out({n, m});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[static_cast<int64_t>(j) * m + i] = x[static_cast<int64_t>(i) * n + j];
    return unary(std::move(out), a, [m, n](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      TensorT<T>& ga = g.ensure_grad(ia);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i)
          ga[static_cast<int64_t>(i) * n + j] += go[static_cast<int64_t>(j) * m + i];
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), Err::ShapeMismatch, "concat of nothing");
    int rows = val(parts[0]).dim(0);
    int total = 0;
    std::vector<int> widths;
    for (Var p : parts) {
      require(val(p).ndim() == 2 && val(p).dim(0) == rows, Err::ShapeMismatch, "concat_cols rows");
      widths.push_back(val(p).dim(1));
      total += val(p).dim(1);
    }
    TensorT<T> out({rows, total});
    int off = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
      const TensorT<T>& x = val(parts[k]);
      for (int i = 0; i < rows; ++i)
        std::copy(x.data() + static_cast<int64_t>(i) * widths[k],
                  x.data() + static_cast<int64_t>(i + 1) * widths[k],
                  out.data() + static_cast<int64_t>(i) * total + off);
      off += widths[k];
    }
    Node n;
    n.value = std::move(out);
    std::vector<int> ids;
    bool needs = false;
    for (Var p : parts) {
      ids.push_back(p.id);
      needs = needs || this->needs(p.id);
    }
    n.needs_grad = needs && grad_enabled_;
    if (n.needs_grad) {
      n.back = [ids, widths, rows, total](GraphT& g, int id) {
        const TensorT<T>& go = g.node(id).grad;
        int o = 0;
        for (size_t k = 0; k < ids.size(); ++k) {
          if (g.needs(ids[k])) {
            TensorT<T>& gp = g.ensure_grad(ids[k]);
            for (int i = 0; i < rows; ++i) {
              const T* src = go.data() + static_cast<int64_t>(i) * total + o;
              T* dst = gp.data() + static_cast<int64_t>(i) * widths[k];
              for (int j = 0; j < widths[k]; ++j) dst[j] += src[j];
            }
          }
          o += widths[k];
        }
      };
    }
    return push(std::move(n));
  }

  Var slice_cols(Var a, int c0, int c1) {
    const TensorT<T>& x = val(a);
    require(x.ndim() == 2 && c0 >= 0 && c1 <= x.dim(1) && c0 < c1, Err::ShapeMismatch,
            "slice_cols range");
    int rows = x.dim(0), cols = x.dim(1), w = c1 - c0;
    TensorT<T> out({rows, w});
    for (int i = 0; i < rows; ++i)
      std::copy(x.data() + static_cast<int64_t>(i) * cols + c0,
                x.data() + static_cast<int64_t>(i) * cols + c1,
                out.data() + static_cast<int64_t>(i) * w);
    return unary(std::move(out), a, [rows, cols, c0, w](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      TensorT<T>& ga = g.ensure_grad(ia);
      for (int i = 0; i < rows; ++i) {
        const T* src = go.data() + static_cast<int64_t>(i) * w;
        T* dst = ga.data() + static_cast<int64_t>(i) * cols + c0;
        for (int j = 0; j < w; ++j) dst[j] += src[j];
      }
    });
  }

  Var slice_rows(Var a, int r0, int r1) {
    const TensorT<T>& x = val(a);
    require(x.ndim() == 2 && r0 >= 0 && r1 <= x.dim(0) && r0 < r1, Err::ShapeMismatch,
            "slice_rows range");
    int cols = x.dim(1), h = r1 - r0;
    TensorT<T> out({h, cols});
    std::copy(x.data() + static_cast<int64_t>(r0) * cols, x.data() + static_cast<int64_t>(r1) * cols,
              out.data());
    return unary(std::move(out), a, [r0, cols, h](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      TensorT<T>& ga = g.ensure_grad(ia);
      T* dst = ga.data() + static_cast<int64_t>(r0) * cols;
      for (int64_t i = 0; i < static_cast<int64_t>(h) * cols; ++i) dst[i] += go[i];
    });
  }

  // Row subset by index list: x [N,D] -> [len(idx),D].
  Var gather_rows(Var a, std::vector<int> idx) {
    const TensorT<T>& x = val(a);
    require(x.ndim() == 2, Err::ShapeMismatch, "gather_rows wants 2-d");
    int cols = x.dim(1);
    TensorT<T> out({static_cast<int>(idx.size()), cols});
    for (size_t i = 0; i < idx.size(); ++i) {
      require(idx[i] >= 0 && idx[i] < x.dim(0), Err::ShapeMismatch, "gather index out of range");
      std::copy(x.data() + static_cast<int64_t>(idx[i]) * cols,
                x.data() + static_cast<int64_t>(idx[i] + 1) * cols,
                out.data() + static_cast<int64_t>(i) * cols);
    }
    return unary(std::move(out), a, [idx, cols](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      TensorT<T>& ga = g.ensure_grad(ia);
      for (size_t i = 0; i < idx.size(); ++i) {
        const T* src = go.data() + static_cast<int64_t>(i) * cols;
        T* dst = ga.data() + static_cast<int64_t>(idx[i]) * cols;
        for (int j = 0; j < cols; ++j) dst[j] += src[j];
      }
    });
  }

  // Stack two row-blocks vertically: a [N1,D], b [N2,D] -> [N1+N2,D].
  Var concat_rows(Var a, Var b) {
    const TensorT<T>& x = val(a);
    const TensorT<T>& y = val(b);
    require(x.ndim() == 2 && y.ndim() == 2 && x.dim(1) == y.dim(1), Err::ShapeMismatch,
            "concat_rows widths differ");
    int n1 = x.dim(0), n2 = y.dim(0), d = x.dim(1);
    TensorT<T> out({n1 + n2, d});
    std::copy(x.data(), x.data() + x.numel(), out.data());
    std::copy(y.data(), y.data() + y.numel(), out.data() + x.numel());
    return unary_binary(std::move(out), a, b, [n1, n2, d](GraphT& g, int id, int ia, int ib) {
      const TensorT<T>& go = g.node(id).grad;
      if (g.needs(ia)) {
        TensorT<T>& ga = g.ensure_grad(ia);
        for (int64_t i = 0; i < static_cast<int64_t>(n1) * d; ++i) ga[i] += go[i];
      }
      if (g.needs(ib)) {
        TensorT<T>& gb = g.ensure_grad(ib);
        int64_t off = static_cast<int64_t>(n1) * d;
        for (int64_t i = 0; i < static_cast<int64_t>(n2) * d; ++i) gb[i] += go[off + i];
      }
    });
  }

  // x [N,D] -> [N,K,D] by repetition along a new middle axis.
  Var tile_mid(Var a, int reps) {
    const TensorT<T>& x = val(a);
    require(x.ndim() == 2, Err::ShapeMismatch, "tile_mid wants 2-d");
    int n = x.dim(0), d = x.dim(1);
    TensorT<T> out({n, reps, d});
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < reps; ++k)
        std::copy(x.data() + static_cast<int64_t>(i) * d, x.data() + static_cast<int64_t>(i + 1) * d,
                  out.data() + (static_cast<int64_t>(i) * reps + k) * d);
    return unary(std::move(out), a, [n, d, reps](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      TensorT<T>& ga = g.ensure_grad(ia);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < reps; ++k) {
          const T* src = go.data() + (static_cast<int64_t>(i) * reps + k) * d;
          T* dst = ga.data() + static_cast<int64_t>(i) * d;
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
  }

  // ---- reductions ----

  Var sum_all(Var a) {
    const TensorT<T>& x = val(a);
    T s = 0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x[i];
    return unary(TensorT<T>::scalar(s), a, [](GraphT& g, int id, int ia) {
      T go = g.node(id).grad[0];
      g.accum_idx(ia, [go](int64_t) { return go; });
    });
  }

  Var mean_all(Var a) {
    const TensorT<T>& x = val(a);
    T s = 0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x[i];
    T inv = T(1) / static_cast<T>(x.numel());
    return unary(TensorT<T>::scalar(s * inv), a, [inv](GraphT& g, int id, int ia) {
      T go = g.node(id).grad[0] * inv;
      g.accum_idx(ia, [go](int64_t) { return go; });
    });
  }

  // [N,D] -> [D], mean over rows.
  Var mean_axis0(Var a) {
    const TensorT<T>& x = val(a);
    require(x.ndim() == 2, Err::ShapeMismatch, "mean_axis0 wants 2-d");
    int n = x.dim(0), d = x.dim(1);
    TensorT<T> out({d});
    for (int i = 0; i < n; ++i) {
      const T* row = x.data() + static_cast<int64_t>(i) * d;
      for (int j = 0; j < d; ++j) out[j] += row[j];
    }
    T inv = T(1) / static_cast<T>(n);
    for (int j = 0; j < d; ++j) out[j] *= inv;
    return unary(std::move(out), a, [n, d, inv](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      TensorT<T>& ga = g.ensure_grad(ia);
      for (int i = 0; i < n; ++i) {
        T* dst = ga.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) dst[j] += go[j] * inv;
      }
    });
  }

  // [M,D] -> [M], sum over the last axis.
  Var sum_rows(Var a) {
    const TensorT<T>& x = val(a);
    require(x.ndim() >= 2, Err::ShapeMismatch, "sum_rows wants >= 2-d");
    int d = x.dim(x.ndim() - 1);
    int64_t m = x.numel() / d;
    TensorT<T> out({static_cast<int>(m)});
    for (int64_t i = 0; i < m; ++i) {
      T s = 0;
      const T* row = x.data() + i * d;
      for (int j = 0; j < d; ++j) s += row[j];
      out[i] = s;
    }
    return unary(std::move(out), a, [m, d](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      TensorT<T>& ga = g.ensure_grad(ia);
      for (int64_t i = 0; i < m; ++i) {
        T gi = go[i];
        T* dst = ga.data() + i * d;
        for (int j = 0; j < d; ++j) dst[j] += gi;
      }
    });
  }

  // [N,K] -> [N]: log sum exp over the last axis, stable.
  Var logsumexp_rows(Var a) {
    const TensorT<T>& x = val(a);
    require(x.ndim() == 2, Err::ShapeMismatch, "logsumexp_rows wants 2-d");
    int n = x.dim(0), k = x.dim(1);
    TensorT<T> out({n});
    for (int i = 0; i < n; ++i) {
      const T* row = x.data() + static_cast<int64_t>(i) * k;
      T mx = row[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      T s = 0;
      for (int j = 0; j < k; ++j) s += std::exp(row[j] - mx);
      out[i] = mx + std::log(s);
    }
    return unary(std::move(out), a, [n, k](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      const TensorT<T>& y = g.val(Var{id});
      const T* px = g.val(Var{ia}).data();
      TensorT<T>& ga = g.ensure_grad(ia);
      for (int i = 0; i < n; ++i) {
        T gi = go[i];
        T yi = y[i];
        T* dst = ga.data() + static_cast<int64_t>(i) * k;
        const T* row = px + static_cast<int64_t>(i) * k;
        for (int j = 0; j < k; ++j) dst[j] += gi * std::exp(row[j] - yi);
      }
    });
  }

  Var softmax_rows(Var a) {
    const TensorT<T>& x = val(a);
    require(x.ndim() == 2, Err::ShapeMismatch, "softmax_rows wants 2-d");
    int n = x.dim(0), k = x.dim(1);
    TensorT<T> out({n, k});
    for (int i = 0; i < n; ++i) {
      const T* row = x.data() + static_cast<int64_t>(i) * k;
      T* orow = out.data() + static_cast<int64_t>(i) * k;
      T mx = row[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      T s = 0;
      for (int j = 0; j < k; ++j) {
        orow[j] = std::exp(row[j] - mx);
        s += orow[j];
      }
      T inv = T(1) / s;
      for (int j = 0; j < k; ++j) orow[j] *= inv;
    }
    return unary(std::move(out), a, [n, k](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      const TensorT<T>& y = g.val(Var{id});
      TensorT<T>& ga = g.ensure_grad(ia);
      for (int i = 0; i < n; ++i) {
        const T* gr = go.data() + static_cast<int64_t>(i) * k;
        const T* yr = y.data() + static_cast<int64_t>(i) * k;
        T dot = 0;
        for (int j = 0; j < k; ++j) dot += gr[j] * yr[j];
        T* dst = ga.data() + static_cast<int64_t>(i) * k;
        for (int j = 0; j < k; ++j) dst[j] += yr[j] * (gr[j] - dot);
      }
    });
  }

  Var log_softmax_rows(Var a) {
    Var lse = logsumexp_rows(a);                    // [N]
    const TensorT<T>& x = val(a);
    int n = x.dim(0), k = x.dim(1);
    TensorT<T> out({n, k});
    const TensorT<T>& l = val(lse);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j)
        out[static_cast<int64_t>(i) * k + j] = x[static_cast<int64_t>(i) * k + j] - l[i];
    // Composed node: parents are a and lse; both already handle their grads.
    Node nn;
    nn.value = std::move(out);
    nn.needs_grad = (needs(a.id) || needs(lse.id)) && grad_enabled_;
    int ia = a.id, il = lse.id;
    if (nn.needs_grad) {
      nn.back = [ia, il, n, k](GraphT& g, int id) {
        const TensorT<T>& go = g.node(id).grad;
        if (g.needs(ia)) {
          TensorT<T>& ga = g.ensure_grad(ia);
          for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
        }
        if (g.needs(il)) {
          TensorT<T>& gl = g.ensure_grad(il);
          for (int i = 0; i < n; ++i) {
            T s = 0;
            const T* gr = go.data() + static_cast<int64_t>(i) * k;
            for (int j = 0; j < k; ++j) s += gr[j];
            gl[i] -= s;
          }
        }
      };
    }
    return push(std::move(nn));
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const TensorT<T>& x = val(a);
    const TensorT<T>& w = val(b);
    require(x.ndim() == 2 && w.ndim() == 2 && x.dim(1) == w.dim(0), Err::ShapeMismatch,
            "matmul " + x.shape_str() + " x " + w.shape_str());
    int m = x.dim(0), k = x.dim(1), n = w.dim(1);
    TensorT<T> out({m, n});
    gemm(m, k, n, x.data(), w.data(), out.data(), false);
    return unary_binary(std::move(out), a, b, [m, k, n](GraphT& g, int id, int ia, int ib) {
      const TensorT<T>& go = g.node(id).grad;
      if (g.needs(ia)) {
        TensorT<T>& ga = g.ensure_grad(ia);
        gemm_nt(m, n, k, go.data(), g.val(Var{ib}).data(), ga.data(), true);
      }
      if (g.needs(ib)) {
        TensorT<T>& gb = g.ensure_grad(ib);
        gemm_tn(k, m, n, g.val(Var{ia}).data(), go.data(), gb.data(), true);
      }
    });
  }

  // x [N,D] + b [D] broadcast over rows.
  Var add_bias(Var a, Var b) {
    const TensorT<T>& x = val(a);
    const TensorT<T>& bias = val(b);
    int d = bias.numel() > 0 ? static_cast<int>(bias.numel()) : 0;
    require(x.numel() % d == 0, Err::ShapeMismatch, "add_bias width");
    int64_t rows = x.numel() / d;
    TensorT<T> out(x.shape());
    for (int64_t i = 0; i < rows; ++i) {
      const T* src = x.data() + i * d;
      T* dst = out.data() + i * d;
      for (int j = 0; j < d; ++j) dst[j] = src[j] + bias[j];
    }
    return unary_binary(std::move(out), a, b, [rows, d](GraphT& g, int id, int ia, int ib) {
      const TensorT<T>& go = g.node(id).grad;
      if (g.needs(ia)) g.accum_eq(ia, go);
      if (g.needs(ib)) {
        TensorT<T>& gb = g.ensure_grad(ib);
        for (int64_t i = 0; i < rows; ++i) {
          const T* src = go.data() + i * d;
          for (int j = 0; j < d; ++j) gb[j] += src[j];
        }
      }
    });
  }

  Var linear(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

  // Batched matmul: a [B,M,K] x b [B,K,N] -> [B,M,N].
  Var bmm(Var a, Var b) {
    const TensorT<T>& x = val(a);
    const TensorT<T>& y = val(b);
    require(x.ndim() == 3 && y.ndim() == 3 && x.dim(0) == y.dim(0) && x.dim(2) == y.dim(1),
            Err::ShapeMismatch, "bmm shapes");
    int bsz = x.dim(0), m = x.dim(1), k = x.dim(2), n = y.dim(2);
    TensorT<T> out({bsz, m, n});
    for (int i = 0; i < bsz; ++i)
      gemm(m, k, n, x.data() + static_cast<int64_t>(i) * m * k,
           y.data() + static_cast<int64_t>(i) * k * n, out.data() + static_cast<int64_t>(i) * m * n,
           false);
    return unary_binary(std::move(out), a, b, [bsz, m, k, n](GraphT& g, int id, int ia, int ib) {
      const TensorT<T>& go = g.node(id).grad;
      const T* pa = g.val(Var{ia}).data();
      const T* pb = g.val(Var{ib}).data();
      if (g.needs(ia)) {
        TensorT<T>& ga = g.ensure_grad(ia);
        for (int i = 0; i < bsz; ++i)
          gemm_nt(m, n, k, go.data() + static_cast<int64_t>(i) * m * n,
                  pb + static_cast<int64_t>(i) * k * n, ga.data() + static_cast<int64_t>(i) * m * k,
                  true);
      }
      if (g.needs(ib)) {
        TensorT<T>& gb = g.ensure_grad(ib);
        for (int i = 0; i < bsz; ++i)
          gemm_tn(k, m, n, pa + static_cast<int64_t>(i) * m * k,
                  go.data() + static_cast<int64_t>(i) * m * n,
                  gb.data() + static_cast<int64_t>(i) * k * n, true);
      }
    });
  }

  // a [B,M,K] x b [B,N,K]^T -> [B,M,N] (attention scores).
  Var bmm_nt_op(Var a, Var b) {
    const TensorT<T>& x = val(a);
    const TensorT<T>& y = val(b);
    require(x.ndim() == 3 && y.ndim() == 3 && x.dim(0) == y.dim(0) && x.dim(2) == y.dim(2),
            Err::ShapeMismatch, "bmm_nt shapes");
    int bsz = x.dim(0), m = x.dim(1), k = x.dim(2), n = y.dim(1);
    TensorT<T> out({bsz, m, n});
    for (int i = 0; i < bsz; ++i)
      gemm_nt(m, k, n, x.data() + static_cast<int64_t>(i) * m * k,
              y.data() + static_cast<int64_t>(i) * n * k, out.data() + static_cast<int64_t>(i) * m * n,
              false);
    return unary_binary(std::move(out), a, b, [bsz, m, k, n](GraphT& g, int id, int ia, int ib) {
      const TensorT<T>& go = g.node(id).grad;
      const T* pa = g.val(Var{ia}).data();
      const T* pb = g.val(Var{ib}).data();
      if (g.needs(ia)) {
        // ga [M,K] += go [M,N] x b [N,K]
        TensorT<T>& ga = g.ensure_grad(ia);
        for (int i = 0; i < bsz; ++i)
          gemm(m, n, k, go.data() + static_cast<int64_t>(i) * m * n,
               pb + static_cast<int64_t>(i) * n * k, ga.data() + static_cast<int64_t>(i) * m * k,
               true);
      }
      if (g.needs(ib)) {
        // gb [N,K] += go^T [N,M] x a [M,K]
        TensorT<T>& gb = g.ensure_grad(ib);
        for (int i = 0; i < bsz; ++i)
          gemm_tn(n, m, k, go.data() + static_cast<int64_t>(i) * m * n,
                  pa + static_cast<int64_t>(i) * m * k, gb.data() + static_cast<int64_t>(i) * n * k,
                  true);
      }
    });
  }

  // Row-wise softmax over [B,T,T] scores restricted to columns j <= i.
  Var causal_softmax(Var a) {
    const TensorT<T>& x = val(a);
    require(x.ndim() == 3 && x.dim(1) == x.dim(2), Err::ShapeMismatch, "causal_softmax wants [B,T,T]");
    int bsz = x.dim(0), t = x.dim(1);
    TensorT<T> out({bsz, t, t});
    for (int b = 0; b < bsz; ++b)
      for (int i = 0; i < t; ++i) {
        const T* row = x.data() + (static_cast<int64_t>(b) * t + i) * t;
        T* orow = out.data() + (static_cast<int64_t>(b) * t + i) * t;
        T mx = row[0];
        for (int j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
        T s = 0;
        for (int j = 0; j <= i; ++j) {
          orow[j] = std::exp(row[j] - mx);
          s += orow[j];
        }
        T inv = T(1) / s;
        for (int j = 0; j <= i; ++j) orow[j] *= inv;
        for (int j = i + 1; j < t; ++j) orow[j] = T(0);
      }
    return unary(std::move(out), a, [bsz, t](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      const TensorT<T>& y = g.val(Var{id});
      TensorT<T>& ga = g.ensure_grad(ia);
      for (int b = 0; b < bsz; ++b)
        for (int i = 0; i < t; ++i) {
          const T* gr = go.data() + (static_cast<int64_t>(b) * t + i) * t;
          const T* yr = y.data() + (static_cast<int64_t>(b) * t + i) * t;
          T dot = 0;
          for (int j = 0; j <= i; ++j) dot += gr[j] * yr[j];
          T* dst = ga.data() + (static_cast<int64_t>(b) * t + i) * t;
          for (int j = 0; j <= i; ++j) dst[j] += yr[j] * (gr[j] - dot);
        }
    });
  }

  // [B,T,H*hd] -> [B*H,T,hd]
  Var split_heads(Var a, int heads) {
    const TensorT<T>& x = val(a);
    require(x.ndim() == 3 && x.dim(2) % heads == 0, Err::ShapeMismatch, "split_heads");
    int bsz = x.dim(0), t = x.dim(1), d = x.dim(2), hd = d / heads;
    TensorT<T> out({bsz * heads, t, hd});
    for (int b = 0; b < bsz; ++b)
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < t; ++i)
          std::copy(x.data() + (static_cast<int64_t>(b) * t + i) * d + h * hd,
                    x.data() + (static_cast<int64_t>(b) * t + i) * d + (h + 1) * hd,
                    out.data() + ((static_cast<int64_t>(b) * heads + h) * t + i) * hd);
    return unary(std::move(out), a, [bsz, t, d, hd, heads](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      TensorT<T>& ga = g.ensure_grad(ia);
      for (int b = 0; b < bsz; ++b)
        for (int h = 0; h < heads; ++h)
          for (int i = 0; i < t; ++i) {
            const T* src = go.data() + ((static_cast<int64_t>(b) * heads + h) * t + i) * hd;
            T* dst = ga.data() + (static_cast<int64_t>(b) * t + i) * d + h * hd;
            for (int j = 0; j < hd; ++j) dst[j] += src[j];
          }
    });
  }

  // [B*H,T,hd] -> [B,T,H*hd]
  Var merge_heads(Var a, int heads) {
    const TensorT<T>& x = val(a);
    require(x.ndim() == 3 && x.dim(0) % heads == 0, Err::ShapeMismatch, "merge_heads");
    int bsz = x.dim(0) / heads, t = x.dim(1), hd = x.dim(2), d = heads * hd;
    TensorT<T> out({bsz, t, d});
    for (int b = 0; b < bsz; ++b)
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < t; ++i)
          std::copy(x.data() + ((static_cast<int64_t>(b) * heads + h) * t + i) * hd,
                    x.data() + ((static_cast<int64_t>(b) * heads + h) * t + i + 1) * hd,
                    out.data() + (static_cast<int64_t>(b) * t + i) * d + h * hd);
    return unary(std::move(out), a, [bsz, t, d, hd, heads](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      TensorT<T>& ga = g.ensure_grad(ia);
      for (int b = 0; b < bsz; ++b)
        for (int h = 0; h < heads; ++h)
          for (int i = 0; i < t; ++i) {
            const T* src = go.data() + (static_cast<int64_t>(b) * t + i) * d + h * hd;
            T* dst = ga.data() + ((static_cast<int64_t>(b) * heads + h) * t + i) * hd;
            for (int j = 0; j < hd; ++j) dst[j] += src[j];
          }
    });
  }

  Var layernorm(Var a, Var gamma, Var beta, T eps = T(1e-5)) {
    const TensorT<T>& x = val(a);
    int d = static_cast<int>(val(gamma).numel());
    require(x.numel() % d == 0, Err::ShapeMismatch, "layernorm width");
    int64_t rows = x.numel() / d;
    TensorT<T> out(x.shape());
    TensorT<T> xhat(x.shape());
    TensorT<T> inv_std({static_cast<int>(rows)});
    const T* pg = val(gamma).data();
    const T* pb = val(beta).data();
    for (int64_t i = 0; i < rows; ++i) {
      const T* row = x.data() + i * d;
      T mu = 0;
      for (int j = 0; j < d; ++j) mu += row[j];
      mu /= d;
      T var = 0;
      for (int j = 0; j < d; ++j) {
        T c = row[j] - mu;
        var += c * c;
      }
      var /= d;
      T is = T(1) / std::sqrt(var + eps);
      inv_std[i] = is;
      T* xr = xhat.data() + i * d;
      T* orow = out.data() + i * d;
      for (int j = 0; j < d; ++j) {
        xr[j] = (row[j] - mu) * is;
        orow[j] = xr[j] * pg[j] + pb[j];
      }
    }
    Node n;
    n.value = std::move(out);
    n.aux1 = std::move(xhat);
    n.aux2 = std::move(inv_std);
    int ia = a.id, ig = gamma.id, ib = beta.id;
    n.needs_grad = (needs(ia) || needs(ig) || needs(ib)) && grad_enabled_;
    if (n.needs_grad) {
      n.back = [ia, ig, ib, rows, d](GraphT& g, int id) {
        const TensorT<T>& go = g.node(id).grad;
        const TensorT<T>& xh = g.node(id).aux1;
        const TensorT<T>& istd = g.node(id).aux2;
        const T* pg2 = g.val(Var{ig}).data();
        if (g.needs(ig)) {
          TensorT<T>& gg = g.ensure_grad(ig);
          for (int64_t i = 0; i < rows; ++i) {
            const T* gr = go.data() + i * d;
            const T* xr = xh.data() + i * d;
            for (int j = 0; j < d; ++j) gg[j] += gr[j] * xr[j];
          }
        }
        if (g.needs(ib)) {
          TensorT<T>& gb = g.ensure_grad(ib);
          for (int64_t i = 0; i < rows; ++i) {
            const T* gr = go.data() + i * d;
            for (int j = 0; j < d; ++j) gb[j] += gr[j];
          }
        }
        if (g.needs(ia)) {
          TensorT<T>& ga = g.ensure_grad(ia);
          for (int64_t i = 0; i < rows; ++i) {
            const T* gr = go.data() + i * d;
            const T* xr = xh.data() + i * d;
            T m1 = 0, m2 = 0;
            for (int j = 0; j < d; ++j) {
              T gj = gr[j] * pg2[j];
              m1 += gj;
              m2 += gj * xr[j];
            }
            m1 /= d;
            m2 /= d;
            T is = istd[i];
            T* dst = ga.data() + i * d;
            for (int j = 0; j < d; ++j) {
              T gj = gr[j] * pg2[j];
              dst[j] += is * (gj - m1 - xr[j] * m2);
            }
          }
        }
      };
    }
    return push(std::move(n));
  }

  Var dropout(Var a, double p, Rng& rng, bool train) {
    if (!train || p <= 0.0) return a;
    const TensorT<T>& x = val(a);
    TensorT<T> out(x.shape());
    TensorT<T> mask(x.shape());
    T keep_inv = T(1.0 / (1.0 - p));
    for (int64_t i = 0; i < x.numel(); ++i) {
      bool keep = rng.uniform() >= p;
      mask[i] = keep ? keep_inv : T(0);
      out[i] = x[i] * mask[i];
    }
    Node n;
    n.value = std::move(out);
    n.aux1 = std::move(mask);
    n.needs_grad = needs(a.id) && grad_enabled_;
    int ia = a.id;
    if (n.needs_grad) {
      n.back = [ia](GraphT& g, int id) {
        const TensorT<T>& go = g.node(id).grad;
        const TensorT<T>& m = g.node(id).aux1;
        g.accum_idx(ia, [&](int64_t i) { return go[i] * m[i]; });
      };
    }
    return push(std::move(n));
  }

  // ---- convolution ----

  // x [N,C,H,W], w [O,C,kh,kw], b [O].
  Var conv2d(Var xa, Var wa, Var ba, int stride, int pad) {
    const TensorT<T>& x = val(xa);
    const TensorT<T>& w = val(wa);
    require(x.ndim() == 4 && w.ndim() == 4 && x.dim(1) == w.dim(1), Err::ShapeMismatch,
            "conv2d shapes " + x.shape_str() + " w " + w.shape_str());
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (wd + 2 * pad - kw) / stride + 1;
    require(oh > 0 && ow > 0, Err::ShapeMismatch, "conv2d output empty");
    TensorT<T> out({n, oc, oh, ow});
    const int ckk = c * kh * kw;
    const int ohw = oh * ow;
    const T* pb = val(ba).data();
    int nt = ThreadPool::instance().threads();
    int parts = std::min(nt, n);
    if (parts < 1) parts = 1;
    parallel_for(parts, [&](int64_t p0, int64_t p1) {
      std::vector<T> col(static_cast<size_t>(ckk) * ohw);
      for (int64_t p = p0; p < p1; ++p) {
        int s0 = static_cast<int>(n * p / parts), s1 = static_cast<int>(n * (p + 1) / parts);
        for (int s = s0; s < s1; ++s) {
          im2col(x.data() + static_cast<int64_t>(s) * c * h * wd, c, h, wd, kh, kw, stride, pad, oh,
                 ow, col.data());
          T* yp = out.data() + static_cast<int64_t>(s) * oc * ohw;
          gemm(oc, ckk, ohw, w.data(), col.data(), yp, false);
          for (int o = 0; o < oc; ++o) {
            T bv = pb[o];
            T* row = yp + static_cast<int64_t>(o) * ohw;
            for (int j = 0; j < ohw; ++j) row[j] += bv;
          }
        }
      }
    });
    Node node;
    node.value = std::move(out);
    int ix = xa.id, iw = wa.id, ib = ba.id;
    node.needs_grad = (needs(ix) || needs(iw) || needs(ib)) && grad_enabled_;
    if (node.needs_grad) {
      node.back = [=](GraphT& g, int id) {
        const TensorT<T>& go = g.node(id).grad;
        const TensorT<T>& xv = g.val(Var{ix});
        const TensorT<T>& wv = g.val(Var{iw});
        bool nx = g.needs(ix), nw = g.needs(iw), nb = g.needs(ib);
        TensorT<T>* gx = nx ? &g.ensure_grad(ix) : nullptr;
        TensorT<T>* gw = nw ? &g.ensure_grad(iw) : nullptr;
        TensorT<T>* gb = nb ? &g.ensure_grad(ib) : nullptr;
        int nt2 = ThreadPool::instance().threads();
        int parts2 = std::min(nt2, n);
        if (parts2 < 1) parts2 = 1;
        // Per-chunk partials for w/b grads, reduced in fixed chunk order.
        std::vector<std::vector<T>> gw_part(static_cast<size_t>(parts2)),
            gb_part(static_cast<size_t>(parts2));
        parallel_for(parts2, [&](int64_t p0, int64_t p1) {
          std::vector<T> col(static_cast<size_t>(ckk) * ohw);
          std::vector<T> dcol(static_cast<size_t>(ckk) * ohw);
          for (int64_t p = p0; p < p1; ++p) {
            std::vector<T>& gwp = gw_part[static_cast<size_t>(p)];
            std::vector<T>& gbp = gb_part[static_cast<size_t>(p)];
            if (nw) gwp.assign(static_cast<size_t>(oc) * ckk, T(0));
            if (nb) gbp.assign(static_cast<size_t>(oc), T(0));
            int s0 = static_cast<int>(n * p / parts2), s1 = static_cast<int>(n * (p + 1) / parts2);
            for (int s = s0; s < s1; ++s) {
              const T* dyp = go.data() + static_cast<int64_t>(s) * oc * ohw;
              if (nx) {
                gemm_tn(ckk, oc, ohw, wv.data(), dyp, dcol.data(), false);
                col2im_add(dcol.data(), c, h, wd, kh, kw, stride, pad, oh, ow,
                           gx->data() + static_cast<int64_t>(s) * c * h * wd);
              }
              if (nw) {
                im2col(xv.data() + static_cast<int64_t>(s) * c * h * wd, c, h, wd, kh, kw, stride,
                       pad, oh, ow, col.data());
                gemm_nt(oc, ohw, ckk, dyp, col.data(), gwp.data(), true);
              }
              if (nb) {
                for (int o = 0; o < oc; ++o) {
                  T sum = 0;
                  const T* row = dyp + static_cast<int64_t>(o) * ohw;
                  for (int j = 0; j < ohw; ++j) sum += row[j];
                  gbp[static_cast<size_t>(o)] += sum;
                }
              }
            }
          }
        });
        for (int p = 0; p < parts2; ++p) {
          if (nw && !gw_part[static_cast<size_t>(p)].empty())
            for (size_t i = 0; i < gw_part[static_cast<size_t>(p)].size(); ++i)
              (*gw)[static_cast<int64_t>(i)] += gw_part[static_cast<size_t>(p)][i];
          if (nb && !gb_part[static_cast<size_t>(p)].empty())
            for (size_t i = 0; i < gb_part[static_cast<size_t>(p)].size(); ++i)
              (*gb)[static_cast<int64_t>(i)] += gb_part[static_cast<size_t>(p)][i];
        }
      };
    }
    return push(std::move(node));
  }

  // [N,C,H,W] -> [N,C]
  Var global_avgpool(Var a) {
    const TensorT<T>& x = val(a);
    require(x.ndim() == 4, Err::ShapeMismatch, "global_avgpool wants 4-d");
    int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    TensorT<T> out({n, c});
    T inv = T(1) / static_cast<T>(hw);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) {
        const T* plane = x.data() + (static_cast<int64_t>(i) * c + j) * hw;
        T s = 0;
        for (int q = 0; q < hw; ++q) s += plane[q];
        out.at2(i, j) = s * inv;
      }
    return unary(std::move(out), a, [n, c, hw, inv](GraphT& g, int id, int ia) {
      const TensorT<T>& go = g.node(id).grad;
      TensorT<T>& ga = g.ensure_grad(ia);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
          T gv = go[static_cast<int64_t>(i) * c + j] * inv;
          T* plane = ga.data() + (static_cast<int64_t>(i) * c + j) * hw;
          for (int q = 0; q < hw; ++q) plane[q] += gv;
        }
    });
  }

  // ---- backward ----

  void backward(Var loss) {
    require(grad_enabled_, Err::ShapeMismatch, "backward on no-grad graph");
    require(val(loss).numel() == 1, Err::ShapeMismatch, "loss must be scalar");
    ensure_grad(loss.id)[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.grad.empty()) continue;
      if (n.ext_grad) {
        TensorT<T>& eg = *n.ext_grad;
        for (int64_t i = 0; i < n.grad.numel(); ++i) eg[i] += n.grad[i];
      } else if (n.back) {
        n.back(*this, id);
      }
    }
  }

  size_t size() const { return nodes_.size(); }

  // ---- internals used by closures ----

  struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    TensorT<T> aux1;  // op scratch kept for backward (masks, normalized values)
    TensorT<T> aux2;
    TensorT<T>* ext_value = nullptr;
    TensorT<T>* ext_grad = nullptr;
    std::function<void(GraphT&, int)> back;
    bool needs_grad = false;
  };

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  bool needs(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  TensorT<T>& ensure_grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) {
      const TensorT<T>& v = n.ext_value ? *n.ext_value : n.value;
      n.grad = TensorT<T>(v.shape());
    }
    return n.grad;
  }

  void accum_eq(int id, const TensorT<T>& g) {
    if (!needs(id)) return;
    TensorT<T>& dst = ensure_grad(id);
    for (int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  }

  template <typename F>
  void accum_map(int id, const TensorT<T>& g, F f) {
    if (!needs(id)) return;
    TensorT<T>& dst = ensure_grad(id);
    for (int64_t i = 0; i < g.numel(); ++i) dst[i] += f(g[i]);
  }

  template <typename F>
  void accum_idx(int id, F f) {
    if (!needs(id)) return;
    TensorT<T>& dst = ensure_grad(id);
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += f(i);
  }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void check_same(Var a, Var b, const char* op) {
    require(val(a).numel() == val(b).numel(), Err::ShapeMismatch,
            std::string(op) + " " + val(a).shape_str() + " vs " + val(b).shape_str());
  }

  template <typename F>
  Var unary(TensorT<T> out, Var a, F back) {
    Node n;
    n.value = std::move(out);
    n.needs_grad = needs(a.id) && grad_enabled_;
    if (n.needs_grad) {
      int ia = a.id;
      n.back = [back, ia](GraphT& g, int id) { back(g, id, ia); };
    }
    return push(std::move(n));
  }

  template <typename F>
  Var unary_binary(TensorT<T> out, Var a, Var b, F back) {
    Node n;
    n.value = std::move(out);
    n.needs_grad = (needs(a.id) || needs(b.id)) && grad_enabled_;
    if (n.needs_grad) {
      int ia = a.id, ib = b.id;
      n.back = [back, ia, ib](GraphT& g, int id) { back(g, id, ia, ib); };
    }
    return push(std::move(n));
  }

  static void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad, int oh,
                     int ow, T* col) {
    for (int ch = 0; ch < c; ++ch)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          T* dst = col + ((static_cast<int64_t>(ch) * kh + ky) * kw + kx) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            int iy = oy * stride + ky - pad;
            for (int ox = 0; ox < ow; ++ox) {
              int ix = ox * stride + kx - pad;
              dst[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                      ? x[(static_cast<int64_t>(ch) * h + iy) * w + ix]
                                      : T(0);
            }
          }
        }
  }

  static void col2im_add(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad,
                         int oh, int ow, T* x) {
    for (int ch = 0; ch < c; ++ch)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const T* src = col + ((static_cast<int64_t>(ch) * kh + ky) * kw + kx) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= w) continue;
              x[(static_cast<int64_t>(ch) * h + iy) * w + ix] += src[oy * ow + ox];
            }
          }
        }
  }

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

using Graph = GraphT<float>;
using GraphD = GraphT<double>;

}  // namespace playmimic
