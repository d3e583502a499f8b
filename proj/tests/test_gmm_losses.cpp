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

#include <cmath>

#include "playmimic/gmm.hpp"
#include "playmimic/rng.hpp"

using namespace playmimic;

namespace {

// Independent oracle: mixture density by direct summation, no log-sum-exp.
double nll_naive(const GmmParams& p, const float* tau) {
  int K = p.modes(), D = p.dim();
  double density = 0;
  for (int k = 0; k < K; ++k) {
    double comp = p.weights[k];
    for (int d = 0; d < D; ++d) {
      double s = p.stds[static_cast<int64_t>(k) * D + d];
      double mu = p.means[static_cast<int64_t>(k) * D + d];
      comp *= std::exp(-0.5 * (tau[d] - mu) * (tau[d] - mu) / (s * s)) / (s * std::sqrt(2 * M_PI));
    }
    density += comp;
  }
  return -std::log(density);
}

GmmParams random_gmm(int K, int D, Rng& rng, double mu_scale = 1.0) {
  GmmParams p;
  p.weights = Tensor({K});
  p.means = Tensor({K, D});
  p.stds = Tensor({K, D});
  float sum = 0;
  for (int k = 0; k < K; ++k) {
    p.weights[k] = static_cast<float>(rng.uniform(0.1, 1.0));
    sum += p.weights[k];
  }
  for (int k = 0; k < K; ++k) p.weights[k] /= sum;
  for (int64_t i = 0; i < int64_t(K) * D; ++i) {
    p.means[i] = static_cast<float>(rng.normal(0, mu_scale));
    p.stds[i] = static_cast<float>(rng.uniform(0.3, 1.5));
  }
  return p;
}

}  // namespace

TEST_CASE("unit gaussian at its mean: nll = D/2 ln 2pi") {
  int D = 30;
  GmmParams p;
  p.weights = Tensor({1}, {1.0f});
  p.means = Tensor({1, D});
  p.stds = Tensor::full({1, D}, 1.0f);
  Tensor tau({D});
  double expect = 0.5 * D * kLn2Pi;  // 15 ln(2pi) ~= 27.568
  CHECK(gmm_nll(p, tau) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(expect == doctest::Approx(27.568).epsilon(1e-3));
}

TEST_CASE("action-dim gaussian at its mean: nll = 2 ln 2pi") {
  int D = 4;
  GmmParams p;
  p.weights = Tensor({1}, {1.0f});
  p.means = Tensor({1, D});
  p.stds = Tensor::full({1, D}, 1.0f);
  Tensor tau({D});
  CHECK(gmm_nll(p, tau) == doctest::Approx(2.0 * kLn2Pi).epsilon(1e-9));
  CHECK(2.0 * kLn2Pi == doctest::Approx(3.676).epsilon(1e-3));
}

TEST_CASE("mixture of identical components collapses to one") {
  Rng rng(1);
  for (int D : {4, 30}) {
    GmmParams one = random_gmm(1, D, rng);
    GmmParams two;
    two.weights = Tensor({2}, {0.5f, 0.5f});
    two.means = Tensor({2, D});
    two.stds = Tensor({2, D});
    for (int d = 0; d < D; ++d) {
      two.means[d] = two.means[D + d] = one.means[d];
      two.stds[d] = two.stds[D + d] = one.stds[d];
    }
    Tensor tau({D});
    for (int d = 0; d < D; ++d) tau[d] = static_cast<float>(rng.normal(0, 1));
    CHECK(gmm_nll(two, tau) == doctest::Approx(gmm_nll(one, tau)).epsilon(1e-9));
  }
}

TEST_CASE("log-sum-exp nll matches the naive-density oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    int D = trial % 2 == 0 ? 30 : 4;
    GmmParams p = random_gmm(5, D, rng);
    Tensor tau({D});
    for (int d = 0; d < D; ++d) tau[d] = static_cast<float>(rng.normal(0, 1.2));
    double a = gmm_nll(p, tau.data());
    double b = nll_naive(p, tau.data());
    CHECK(std::fabs(a - b) / std::max(1.0, std::fabs(b)) < 1e-6);
  }
}

TEST_CASE("nll is invariant under component permutation") {
  Rng rng(3);
  GmmParams p = random_gmm(5, 7, rng);
  Tensor tau({7});
  for (int d = 0; d < 7; ++d) tau[d] = static_cast<float>(rng.normal(0, 1));
  double base = gmm_nll(p, tau.data());
  // rotate components
  GmmParams q = p;
  int K = 5, D = 7;
  for (int k = 0; k < K; ++k) {
    int src = (k + 2) % K;
    q.weights[k] = p.weights[src];
    for (int d = 0; d < D; ++d) {
      q.means[static_cast<int64_t>(k) * D + d] = p.means[static_cast<int64_t>(src) * D + d];
      q.stds[static_cast<int64_t>(k) * D + d] = p.stds[static_cast<int64_t>(src) * D + d];
    }
  }
  CHECK(gmm_nll(q, tau.data()) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("head decoding: equal logits give uniform weights and floored stds") {
  int K = 5, D = 30;
  Tensor head({gmm_head_width(K, D)});
  for (int64_t i = K + K * D; i < head.numel(); ++i) head[i] = -30.0f;  // deep softplus tail
  GmmParams p = gmm_from_head(head.data(), K, D, 1e-4f);
  for (int k = 0; k < K; ++k) CHECK(p.weights[k] == doctest::Approx(0.2).epsilon(1e-6));
  float sum = 0;
  for (int k = 0; k < K; ++k) sum += p.weights[k];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  for (int64_t i = 0; i < p.stds.numel(); ++i) {
    CHECK(p.stds[i] >= 1e-4f);
    CHECK(p.stds[i] < 1.001e-4f);
  }
  CHECK(p.valid());
}

// ---------------------------------------------------------------------------
// Moment KL
// ---------------------------------------------------------------------------

TEST_CASE("kl of identical batches is zero") {
  Rng rng(4);
  Tensor x({16, 8});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal(0, 1));
  CHECK(kl_domain_loss(x, x) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(symmetric_moment_kl(x, x) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("unit-variance mean shift gives half per dimension") {
  Rng rng(5);
  int n = 200000, d = 4;
  Tensor a({n, d}), b({n, d});
  for (int64_t i = 0; i < a.numel(); ++i) a[i] = static_cast<float>(rng.normal(0, 1));
  for (int64_t i = 0; i < b.numel(); ++i) b[i] = static_cast<float>(rng.normal(1, 1));
  double kl = kl_domain_loss(a, b);
  CHECK(kl == doctest::Approx(0.5 * d).epsilon(0.03));
  double sym = symmetric_moment_kl(a, b);
  CHECK(sym == doctest::Approx(0.5 * d).epsilon(0.03));
}

TEST_CASE("kl matches a dimension-by-dimension closed-form oracle") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    int n1 = 3 + static_cast<int>(rng.uniform_int(40));
    int n2 = 3 + static_cast<int>(rng.uniform_int(40));
    int d = 1 + static_cast<int>(rng.uniform_int(12));
    Tensor a({n1, d}), b({n2, d});
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = static_cast<float>(rng.normal(0.3, 1.7));
    for (int64_t i = 0; i < b.numel(); ++i) b[i] = static_cast<float>(rng.normal(-0.2, 0.8));
    // oracle: per-dimension moments and the scalar gaussian KL formula
    double expect = 0;
    for (int j = 0; j < d; ++j) {
      auto moments = [&](const Tensor& x) {
        double m = 0, v = 0;
        for (int i = 0; i < x.dim(0); ++i) m += x.at2(i, j);
        m /= x.dim(0);
        for (int i = 0; i < x.dim(0); ++i) v += (x.at2(i, j) - m) * (x.at2(i, j) - m);
        v = std::max(v / x.dim(0), 1e-6);
        return std::pair<double, double>(m, v);
      };
      auto [m1, v1] = moments(a);
      auto [m2, v2] = moments(b);
      expect += std::log(std::sqrt(v2) / std::sqrt(v1)) + (v1 + (m1 - m2) * (m1 - m2)) / (2 * v2) - 0.5;
    }
    double got = kl_domain_loss(a, b);
    CHECK(std::fabs(got - expect) / std::max(1.0, std::fabs(expect)) < 1e-6);
  }
}

TEST_CASE("kl is nonnegative and zero only at equal moments") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a({12, 5}), b({9, 5});
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = static_cast<float>(rng.normal(0, 1));
    for (int64_t i = 0; i < b.numel(); ++i) b[i] = static_cast<float>(rng.normal(0.1, 1.1));
    CHECK(kl_domain_loss(a, b) >= 0.0);
  }
  Tensor x({8, 3});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal(0, 1));
  // same moments via duplication
  Tensor y({16, 3});
  std::copy(x.data(), x.data() + x.numel(), y.data());
  std::copy(x.data(), x.data() + x.numel(), y.data() + x.numel());
  CHECK(kl_domain_loss(y, x) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("insufficient batches are rejected") {
  Tensor one({1, 4});
  Tensor ok({4, 4});
  CHECK_THROWS_WITH_AS(kl_domain_loss(one, ok), doctest::Contains("InsufficientBatch"), Exception);
  CHECK_THROWS_AS(kl_domain_loss(ok, one), Exception);
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

TEST_CASE("near-deterministic single mode samples concentrate at its mean") {
  int K = 2, D = 6;
  GmmParams p;
  p.weights = Tensor({K}, {0.999f, 0.001f});
  p.means = Tensor({K, D});
  p.stds = Tensor::full({K, D}, 1e-4f);
  for (int d = 0; d < D; ++d) {
    p.means[d] = 0.5f;
    p.means[D + d] = -3.0f;
  }
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    Tensor s = gmm_sample(p, rng);
    if (std::fabs(s[0] - 0.5f) < 0.1f) {
      for (int d = 0; d < D; ++d) CHECK(std::fabs(s[d] - 0.5f) < 1e-3f);
    }
  }
  Tensor mode = gmm_mode_mean(p);
  for (int d = 0; d < D; ++d) CHECK(mode[d] == 0.5f);
}

TEST_CASE("empirical mode frequencies match the weights within one percent") {
  Rng prng(9);
  GmmParams p = random_gmm(5, 2, prng, 20.0);  // widely separated means
  for (int64_t i = 0; i < p.stds.numel(); ++i) p.stds[i] = 0.05f;
  Rng rng(10);
  int n = 100000;
  std::vector<int> counts(5, 0);
  for (int i = 0; i < n; ++i) {
    Tensor s = gmm_sample(p, rng);
    // classify by nearest mean
    int best = 0;
    double bd = 1e30;
    for (int k = 0; k < 5; ++k) {
      double d0 = s[0] - p.means[static_cast<int64_t>(k) * 2];
      double d1 = s[1] - p.means[static_cast<int64_t>(k) * 2 + 1];
      double dd = d0 * d0 + d1 * d1;
      if (dd < bd) {
        bd = dd;
        best = k;
      }
    }
    counts[static_cast<size_t>(best)]++;
  }
  for (int k = 0; k < 5; ++k)
    CHECK(std::fabs(double(counts[static_cast<size_t>(k)]) / n - p.weights[k]) < 0.01);
}

TEST_CASE("sample mean converges to the mixture mean") {
  Rng prng(11);
  GmmParams p = random_gmm(4, 3, prng, 2.0);
  Tensor mix_mean = gmm_mixture_mean(p);
  Rng rng(12);
  int n = 60000;
  std::vector<double> acc(3, 0.0), acc2(3, 0.0);
  for (int i = 0; i < n; ++i) {
    Tensor s = gmm_sample(p, rng);
    for (int d = 0; d < 3; ++d) {
      acc[static_cast<size_t>(d)] += s[d];
      acc2[static_cast<size_t>(d)] += double(s[d]) * s[d];
    }
  }
  for (int d = 0; d < 3; ++d) {
    double mean = acc[static_cast<size_t>(d)] / n;
    double var = acc2[static_cast<size_t>(d)] / n - mean * mean;
    double se = std::sqrt(var / n);
    CHECK(std::fabs(mean - mix_mean[d]) < 3 * se + 1e-9);
  }
}
