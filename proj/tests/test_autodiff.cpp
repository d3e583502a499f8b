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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "playmimic/gmm.hpp"
#include "playmimic/graph.hpp"
#include "playmimic/nn.hpp"
#include "playmimic/rng.hpp"

using namespace playmimic;
using GD = GraphT<double>;

namespace {

TensorT<double> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  TensorT<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0, scale);
  return t;
}

}  // namespace

TEST_CASE("gemm matches straightforward triple loop") {
  Rng rng(11);
  int m = 7, k = 13, n = 9;
  TensorT<double> a = random_tensor({m, k}, rng);
  TensorT<double> b = random_tensor({k, n}, rng);
  TensorT<double> c({m, n});
  gemm(m, k, n, a.data(), b.data(), c.data(), false);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int q = 0; q < k; ++q) s += a.at2(i, q) * b.at2(q, j);
      CHECK(c.at2(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("elementwise and reduction ops backprop correctly") {
  Rng rng(42);
  ParamStoreT<double> ps(7);
  auto& x = ps.create("x", {4, 6}, ParamStoreT<double>::Init::Zero);
  auto& y = ps.create("y", {4, 6}, ParamStoreT<double>::Init::Zero);
  for (int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = rng.normal(0, 1);
  for (int64_t i = 0; i < y.value.numel(); ++i) y.value[i] = rng.normal(0, 1) + 3.0;

  auto build = [&](GD& g) {
    auto a = g.param(&x.value, &x.grad);
    auto b = g.param(&y.value, &y.grad);
    auto t = g.mul(g.relu(a), g.sigmoid(b));
    t = g.add(t, g.softplus(g.sub(a, b)));
    t = g.div(t, g.add_const(g.square(b), 1.0));
    auto u = g.logsumexp_rows(g.reshape(t, {4, 6}));
    auto s = g.softmax_rows(g.reshape(t, {6, 4}));
    return g.add(g.mean_all(u), g.sum_all(g.mul(s, s)));
  };
  auto res = testing::gradcheck(ps, build);
  CAPTURE(res.worst_param);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("matmul linear layernorm backprop") {
  Rng rng(43);
  ParamStoreT<double> ps(8);
  auto& x = ps.create("x", {5, 8}, ParamStoreT<double>::Init::Zero);
  for (int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = rng.normal(0, 1);
  LinearLayer<double> fc1(ps, "fc1", 8, 10);
  LinearLayer<double> fc2(ps, "fc2", 10, 3);
  LayerNormLayer<double> ln(ps, "ln", 10);

  auto build = [&](GD& g) {
    auto a = g.param(&x.value, &x.grad);
    auto h = ln.forward(g, g.relu(fc1.forward(g, a)));
    auto o = fc2.forward(g, h);
    return g.mean_all(g.square(o));
  };
  auto res = testing::gradcheck(ps, build);
  CAPTURE(res.worst_param);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("conv global pool backprop") {
  Rng rng(44);
  ParamStoreT<double> ps(9);
  auto& x = ps.create("x", {2, 3, 9, 9}, ParamStoreT<double>::Init::Zero);
  for (int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = rng.normal(0, 1);
  Conv2dLayer<double> c1(ps, "c1", 3, 4, 3, 2, 1);
  Conv2dLayer<double> c2(ps, "c2", 4, 5, 3, 1, 1);

  auto build = [&](GD& g) {
    auto a = g.param(&x.value, &x.grad);
    auto h = g.relu(c1.forward(g, a));
    h = c2.forward(g, h);
    return g.mean_all(g.square(g.global_avgpool(h)));
  };
  auto res = testing::gradcheck(ps, build);
  CAPTURE(res.worst_param);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("residual encoder backprop") {
  Rng rng(45);
  ParamStoreT<double> ps(10);
  auto& x = ps.create("x", {2, 3, 16, 16}, ParamStoreT<double>::Init::Zero);
  for (int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = rng.normal(0, 0.5);
  ConvEncoder<double> enc(ps, "enc", 16, 3, {4, 6}, 8);

  auto build = [&](GD& g) {
    auto a = g.param(&x.value, &x.grad);
    return g.mean_all(g.square(enc.forward(g, a)));
  };
  auto res = testing::gradcheck(ps, build, 1e-4);
  CAPTURE(res.worst_param);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("transformer block backprop with causal attention") {
  Rng rng(46);
  ParamStoreT<double> ps(11);
  int b = 2, t = 4, d = 8;
  auto& x = ps.create("x", {b, t, d}, ParamStoreT<double>::Init::Zero);
  for (int64_t i = 0; i < x.value.numel(); ++i) x.value[i] = rng.normal(0, 1);
  TransformerBlock<double> blk(ps, "blk", d, 2, 2);
  Rng drop(0);

  auto build = [&](GD& g) {
    auto a = g.param(&x.value, &x.grad);
    auto h = blk.forward(g, a, 0.0, drop, false);
    return g.mean_all(g.square(h));
  };
  auto res = testing::gradcheck(ps, build);
  CAPTURE(res.worst_param);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gmm nll and kl graph losses backprop") {
  Rng rng(47);
  ParamStoreT<double> ps(12);
  int n = 3, K = 2, D = 5;
  auto& head = ps.create("head", {n, gmm_head_width(K, D)}, ParamStoreT<double>::Init::Zero);
  for (int64_t i = 0; i < head.value.numel(); ++i) head.value[i] = rng.normal(0, 0.7);
  auto& fr = ps.create("fr", {4, 6}, ParamStoreT<double>::Init::Zero);
  auto& fh = ps.create("fh", {5, 6}, ParamStoreT<double>::Init::Zero);
  for (int64_t i = 0; i < fr.value.numel(); ++i) fr.value[i] = rng.normal(0.3, 1.1);
  for (int64_t i = 0; i < fh.value.numel(); ++i) fh.value[i] = rng.normal(-0.2, 0.9);
  TensorT<double> target = random_tensor({n, D}, rng);

  auto build = [&](GD& g) {
    auto hv = g.param(&head.value, &head.grad);
    auto gv = gmm_vars_from_head<double>(g, hv, K, D, 1e-4);
    auto nll = g.mean_all(gmm_nll_g<double>(g, gv, g.input(target)));
    auto kl = kl_domain_loss_g<double>(g, g.param(&fr.value, &fr.grad),
                                       g.param(&fh.value, &fh.grad), 1e-6);
    return g.add(nll, g.scale(kl, 0.01));
  };
  auto res = testing::gradcheck(ps, build);
  CAPTURE(res.worst_param);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("graph runtime gmm nll agrees with graph version") {
  Rng rng(48);
  int K = 5, D = 30;
  TensorT<double> headrow({1, gmm_head_width(K, D)});
  for (int64_t i = 0; i < headrow.numel(); ++i) headrow[i] = rng.normal(0, 0.8);
  TensorT<double> target = random_tensor({1, D}, rng);

  GD g(false);
  auto gv = gmm_vars_from_head<double>(g, g.input(headrow), K, D, 1e-4);
  auto nll = gmm_nll_g<double>(g, gv, g.input(target));
  double from_graph = g.val(nll)[0];

  Tensor headf = headrow.cast<float>();
  GmmParams p = gmm_from_head(headf.data(), K, D, 1e-4f);
  Tensor tf = target.cast<float>();
  double direct = gmm_nll(p, tf.data());
  CHECK(from_graph == doctest::Approx(direct).epsilon(1e-4));
}

TEST_CASE("dropout scales and masks deterministically") {
  Rng rng(49);
  TensorT<float> x = TensorT<float>::full({100, 10}, 1.0f);
  Rng d1(7), d2(7);
  Graph g1(false), g2(false);
  auto y1 = g1.dropout(g1.input(x), 0.25, d1, true);
  auto y2 = g2.dropout(g2.input(x), 0.25, d2, true);
  CHECK(g1.val(y1).vec() == g2.val(y2).vec());
  double mean = 0;
  for (int64_t i = 0; i < g1.val(y1).numel(); ++i) mean += g1.val(y1)[i];
  mean /= double(g1.val(y1).numel());
  CHECK(mean == doctest::Approx(1.0).epsilon(0.1));
  Graph g3(false);
  Rng d3(7);
  auto y3 = g3.dropout(g3.input(x), 0.25, d3, false);
  CHECK(g3.val(y3).vec() == x.vec());
}

TEST_CASE("adam decreases a quadratic") {
  ParamStoreT<float> ps(3);
  auto& w = ps.create("w", {10}, ParamStore::Init::Zero);
  for (int i = 0; i < 10; ++i) w.value[i] = 5.0f + i;
  for (int step = 0; step < 400; ++step) {
    ps.zero_grads();
    Graph g(true);
    auto v = g.param(&w.value, &w.grad);
    auto loss = g.sum_all(g.square(v));
    g.backward(loss);
    ps.adam_step(0.1);
  }
  for (int i = 0; i < 10; ++i) CHECK(std::fabs(w.value[i]) < 0.2f);
}
