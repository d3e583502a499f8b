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
#include <vector>

#include "playmimic/error.hpp"
#include "playmimic/graph.hpp"
#include "playmimic/rng.hpp"
#include "playmimic/tensor.hpp"

namespace playmimic {

inline constexpr double kLn2Pi = 1.8378770664093454835606594728112;

// Diagonal Gaussian mixture: simplex weights, K x D means, K x D stds.
struct GmmParams {
  Tensor weights;  // [K]
  Tensor means;    // [K,D]
  Tensor stds;     // [K,D]

  int modes() const { return weights.ndim() ? weights.dim(0) : 0; }
  int dim() const { return means.ndim() == 2 ? means.dim(1) : 0; }

  bool valid() const {
    if (modes() == 0 || dim() == 0) return false;
    float sum = 0;
    for (int k = 0; k < modes(); ++k) {
      if (weights[k] < 0 || weights[k] > 1) return false;
      sum += weights[k];
    }
    if (std::fabs(sum - 1.0f) > 1e-5f) return false;
    for (int64_t i = 0; i < stds.numel(); ++i)
      if (!(stds[i] > 0)) return false;
    return true;
  }
};

// Raw network head layout: [K logits | K*D means | K*D raw stds].
inline int gmm_head_width(int modes, int dim) { return modes + 2 * modes * dim; }

inline GmmParams gmm_from_head(const float* row, int modes, int dim, float min_std) {
  GmmParams p;
  p.weights = Tensor({modes});
  p.means = Tensor({modes, dim});
  p.stds = Tensor({modes, dim});
  float mx = row[0];
  for (int k = 1; k < modes; ++k) mx = std::max(mx, row[k]);
  float sum = 0;
  for (int k = 0; k < modes; ++k) {
    p.weights[k] = std::exp(row[k] - mx);
    sum += p.weights[k];
  }
  for (int k = 0; k < modes; ++k) p.weights[k] /= sum;
  const float* mu = row + modes;
  const float* sr = row + modes + modes * dim;
  for (int64_t i = 0; i < int64_t(modes) * dim; ++i) {
    p.means[i] = mu[i];
    float x = sr[i];
    float sp = x > 20.0f ? x : std::log1p(std::exp(x));
    p.stds[i] = min_std + sp;
  }
  return p;
}

// Negative log likelihood of one target under the mixture, log-sum-exp form.
inline double gmm_nll(const GmmParams& p, const float* target) {
  int K = p.modes(), D = p.dim();
  require(K > 0 && D > 0, Err::ShapeMismatch, "empty GMM");
  std::vector<double> comp(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    double ll = std::log(static_cast<double>(p.weights[k]) + 1e-300);
    for (int d = 0; d < D; ++d) {
      double s = p.stds[static_cast<int64_t>(k) * D + d];
      double z = (target[d] - p.means[static_cast<int64_t>(k) * D + d]) / s;
      ll += -0.5 * z * z - std::log(s) - 0.5 * kLn2Pi;
    }
    comp[static_cast<size_t>(k)] = ll;
  }
  double mx = comp[0];
  for (int k = 1; k < K; ++k) mx = std::max(mx, comp[static_cast<size_t>(k)]);
  double s = 0;
  for (int k = 0; k < K; ++k) s += std::exp(comp[static_cast<size_t>(k)] - mx);
  return -(mx + std::log(s));
}

inline double gmm_nll(const GmmParams& p, const Tensor& target) {
  require(target.numel() == p.dim(), Err::ShapeMismatch, "gmm_nll target dim");
  return gmm_nll(p, target.data());
}

// Ancestral sampling: component by weight, then diagonal Gaussian.
inline Tensor gmm_sample(const GmmParams& p, Rng& rng) {
  int K = p.modes(), D = p.dim();
  double u = rng.uniform();
  int mode = K - 1;
  double acc = 0;
  for (int k = 0; k < K; ++k) {
    acc += p.weights[k];
    if (u < acc) {
      mode = k;
      break;
    }
  }
  Tensor out({D});
  for (int d = 0; d < D; ++d)
    out[d] = static_cast<float>(rng.normal(p.means[static_cast<int64_t>(mode) * D + d],
                                           p.stds[static_cast<int64_t>(mode) * D + d]));
  return out;
}

inline std::vector<Tensor> gmm_sample_n(const GmmParams& p, int n, Rng& rng) {
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(gmm_sample(p, rng));
  return out;
}

inline int gmm_top_mode(const GmmParams& p) {
  int best = 0;
  for (int k = 1; k < p.modes(); ++k)
    if (p.weights[k] > p.weights[best]) best = k;
  return best;
}

// Mean of the highest-weight component: the deterministic decode.
inline Tensor gmm_mode_mean(const GmmParams& p) {
  int D = p.dim();
  int k = gmm_top_mode(p);
  Tensor out({D});
  std::copy(p.means.data() + static_cast<int64_t>(k) * D,
            p.means.data() + static_cast<int64_t>(k + 1) * D, out.data());
  return out;
}

inline Tensor gmm_mixture_mean(const GmmParams& p) {
  int K = p.modes(), D = p.dim();
  Tensor out({D});
  for (int k = 0; k < K; ++k)
    for (int d = 0; d < D; ++d) out[d] += p.weights[k] * p.means[static_cast<int64_t>(k) * D + d];
  return out;
}

// ---------------------------------------------------------------------------
// Diagonal-Gaussian moment KL between two feature batches.
// ---------------------------------------------------------------------------

struct BatchMoments {
  std::vector<double> mean;
  std::vector<double> var;  // population variance, floored
};

inline BatchMoments batch_moments(const Tensor& x, double var_floor) {
  require(x.ndim() == 2 && x.dim(0) >= 2, Err::InsufficientBatch,
          "need >= 2 samples for batch moments");
  int n = x.dim(0), d = x.dim(1);
  BatchMoments m;
  m.mean.assign(static_cast<size_t>(d), 0.0);
  m.var.assign(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m.mean[static_cast<size_t>(j)] += x.at2(i, j);
  for (int j = 0; j < d; ++j) m.mean[static_cast<size_t>(j)] /= n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      double c = x.at2(i, j) - m.mean[static_cast<size_t>(j)];
      m.var[static_cast<size_t>(j)] += c * c;
    }
  for (int j = 0; j < d; ++j)
    m.var[static_cast<size_t>(j)] = std::max(m.var[static_cast<size_t>(j)] / n, var_floor);
  return m;
}

// KL(N(m1,v1) || N(m2,v2)) summed over dimensions, closed form.
inline double kl_diag_gaussian(const BatchMoments& a, const BatchMoments& b) {
  require(a.mean.size() == b.mean.size(), Err::ShapeMismatch, "moment dims differ");
  double kl = 0;
  for (size_t j = 0; j < a.mean.size(); ++j) {
    double dm = a.mean[j] - b.mean[j];
    kl += 0.5 * (std::log(b.var[j] / a.var[j]) + (a.var[j] + dm * dm) / b.var[j] - 1.0);
  }
  return kl;
}

// KL(Q_r || Q_h) from raw feature batches [N,D].
inline double kl_domain_loss(const Tensor& features_robot, const Tensor& features_hand,
                             double var_floor = 1e-6) {
  BatchMoments r = batch_moments(features_robot, var_floor);
  BatchMoments h = batch_moments(features_hand, var_floor);
  return kl_diag_gaussian(r, h);
}

// Symmetric variant used as the domain-overlap summary. Lower = more overlap.
inline double symmetric_moment_kl(const Tensor& features_a, const Tensor& features_b,
                                  double var_floor = 1e-6) {
  BatchMoments a = batch_moments(features_a, var_floor);
  BatchMoments b = batch_moments(features_b, var_floor);
  return 0.5 * (kl_diag_gaussian(a, b) + kl_diag_gaussian(b, a));
}

// ---------------------------------------------------------------------------
// Graph-side builders (differentiable versions of the same formulas).
// ---------------------------------------------------------------------------

template <typename T>
struct GmmVars {
  typename GraphT<T>::Var logits;  // [N,K]
  typename GraphT<T>::Var means;   // [N,K,D]
  typename GraphT<T>::Var stds;    // [N,K,D]
  int modes = 0;
  int dim = 0;
};

// head [N, K + 2KD] -> mixture vars with softplus std + min_std offset.
template <typename T>
GmmVars<T> gmm_vars_from_head(GraphT<T>& g, typename GraphT<T>::Var head, int modes, int dim,
                              T min_std) {
  const auto& h = g.val(head);
  require(h.ndim() == 2 && h.dim(1) == gmm_head_width(modes, dim), Err::ShapeMismatch,
          "gmm head width");
  int n = h.dim(0);
  GmmVars<T> out;
  out.modes = modes;
  out.dim = dim;
  out.logits = g.slice_cols(head, 0, modes);
  out.means = g.reshape(g.slice_cols(head, modes, modes + modes * dim), {n, modes, dim});
  auto raw = g.slice_cols(head, modes + modes * dim, modes + 2 * modes * dim);
  out.stds = g.reshape(g.add_const(g.softplus(raw), min_std), {n, modes, dim});
  return out;
}

// Per-sample NLL [N] of targets [N,D] under per-sample mixtures.
template <typename T>
typename GraphT<T>::Var gmm_nll_g(GraphT<T>& g, const GmmVars<T>& p, typename GraphT<T>::Var target) {
  int n = g.val(p.logits).dim(0);
  int K = p.modes, D = p.dim;
  auto tiled = g.tile_mid(target, K);                      // [N,K,D]
  auto z = g.div(g.sub(tiled, p.means), p.stds);           // [N,K,D]
  auto sq = g.reshape(g.square(z), {n * K, D});
  auto maha = g.reshape(g.sum_rows(sq), {n, K});           // [N,K]
  auto logstd = g.reshape(g.sum_rows(g.reshape(g.log_op(p.stds), {n * K, D})), {n, K});
  auto comp = g.sub(g.scale(maha, T(-0.5)), logstd);
  comp = g.add_const(comp, T(-0.5 * kLn2Pi * D));
  auto mix = g.add(g.log_softmax_rows(p.logits), comp);    // [N,K]
  auto ll = g.logsumexp_rows(mix);                         // [N]
  return g.scale(ll, T(-1));
}

// Differentiable KL(Q_r || Q_h) over per-dimension batch moments. Variances
// use the centered form: the uncentered E[x^2] - m^2 cancels catastrophically
// in single precision when means dominate.
template <typename T>
typename GraphT<T>::Var kl_domain_loss_g(GraphT<T>& g, typename GraphT<T>::Var feat_r,
                                         typename GraphT<T>::Var feat_h, T var_floor) {
  const auto& fr = g.val(feat_r);
  const auto& fh = g.val(feat_h);
  require(fr.ndim() == 2 && fh.ndim() == 2 && fr.dim(1) == fh.dim(1), Err::ShapeMismatch,
          "feature batches");
  require(fr.dim(0) >= 2 && fh.dim(0) >= 2, Err::InsufficientBatch, "need >= 2 samples per domain");
  int d = fr.dim(1);
  auto moments = [&](typename GraphT<T>::Var feat) {
    auto m = g.mean_axis0(feat);
    auto centered = g.add_bias(feat, g.scale(m, T(-1)));
    auto v = g.clamp_min(g.mean_axis0(g.square(centered)), var_floor);
    return std::pair{m, v};
  };
  auto [mr, vr] = moments(feat_r);
  auto [mh, vh] = moments(feat_h);
  auto logterm = g.sub(g.log_op(vh), g.log_op(vr));
  auto ratio = g.div(g.add(vr, g.square(g.sub(mr, mh))), vh);
  auto total = g.sum_all(g.add(logterm, ratio));
  return g.add_const(g.scale(total, T(0.5)), T(-0.5 * d));
}

}  // namespace playmimic
