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

#include <deque>
#include <string>
#include <vector>

#include <json.hpp>

#include "playmimic/data_pipeline.hpp"
#include "playmimic/gmm.hpp"
#include "playmimic/latent_planner.hpp"
#include "playmimic/nn.hpp"

namespace playmimic::policy {

enum class Variant { kPlanGuided, kGoalConditionedBC };

inline const char* variant_name(Variant v) {
  return v == Variant::kPlanGuided ? "plan_guided" : "gc_bc";
}

// Causal transformer over one-step tokens with a GMM action head. The token
// is a learned projection of [wrist feature, proprio feature, plan] — or, for
// the goal-conditioned baseline, [wrist, proprio, obs L/R, goal L/R] features
// trained end to end with no planner.
struct PolicyConfig {
  Variant variant = Variant::kPlanGuided;
  int image_size = 64;
  int image_feature_dim = 64;
  int proprio_feature_dim = 64;
  int plan_dim = 128;
  int action_dim = 4;  // delta xyz + gripper
  int gmm_modes = 5;
  float gmm_min_std = 0.01f;
  std::string gmm_std_activation = "softplus";
  int gpt_embed = 656;
  int gpt_layers = 4;
  int gpt_heads = 4;
  int gpt_block = 10;
  int gpt_mlp_mult = 2;
  double gpt_dropout = 0.1;
  std::vector<int> head_dims{656, 128};
  std::vector<int> encoder_channels{8, 16, 32};

  double lr = 1e-4;
  double lr_decay_factor = 0.1;
  std::vector<int> lr_decay_epochs{300, 600};
  int batch_size = 16;
  int epochs = 1000;
  int steps_per_epoch = 100;
  int window = 10;
  int h_min = 200, h_max = 600;

  int token_parts_width() const {
    int base = image_feature_dim + proprio_feature_dim;
    return variant == Variant::kPlanGuided ? base + plan_dim : base + 4 * image_feature_dim;
  }

  nlohmann::ordered_json to_json() const {
    return {{"variant", variant_name(variant)},
            {"image_size", image_size},
            {"image_feature_dim", image_feature_dim},
            {"proprio_feature_dim", proprio_feature_dim},
            {"plan_dim", plan_dim},
            {"action_dim", action_dim},
            {"gmm_modes", gmm_modes},
            {"gmm_min_std", gmm_min_std},
            {"gmm_std_activation", gmm_std_activation},
            {"gpt_embed", gpt_embed},
            {"gpt_layers", gpt_layers},
            {"gpt_heads", gpt_heads},
            {"gpt_block", gpt_block},
            {"gpt_mlp_mult", gpt_mlp_mult},
            {"gpt_dropout", gpt_dropout},
            {"head_dims", head_dims},
            {"encoder_channels", encoder_channels},
            {"lr", lr},
            {"lr_decay_factor", lr_decay_factor},
            {"lr_decay_epochs", lr_decay_epochs},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"steps_per_epoch", steps_per_epoch},
            {"window", window},
            {"h_min", h_min},
            {"h_max", h_max}};
  }

  static PolicyConfig from_json(const nlohmann::json& j) {
    PolicyConfig c;
    if (j.value("variant", "plan_guided") == std::string("gc_bc"))
      c.variant = Variant::kGoalConditionedBC;
    c.image_size = j.value("image_size", c.image_size);
    c.image_feature_dim = j.value("image_feature_dim", c.image_feature_dim);
    c.proprio_feature_dim = j.value("proprio_feature_dim", c.proprio_feature_dim);
    c.plan_dim = j.value("plan_dim", c.plan_dim);
    c.action_dim = j.value("action_dim", c.action_dim);
    c.gmm_modes = j.value("gmm_modes", c.gmm_modes);
    c.gmm_min_std = j.value("gmm_min_std", c.gmm_min_std);
    c.gmm_std_activation = j.value("gmm_std_activation", c.gmm_std_activation);
    c.gpt_embed = j.value("gpt_embed", c.gpt_embed);
    c.gpt_layers = j.value("gpt_layers", c.gpt_layers);
    c.gpt_heads = j.value("gpt_heads", c.gpt_heads);
    c.gpt_block = j.value("gpt_block", c.gpt_block);
    c.gpt_mlp_mult = j.value("gpt_mlp_mult", c.gpt_mlp_mult);
    c.gpt_dropout = j.value("gpt_dropout", c.gpt_dropout);
    c.head_dims = j.value("head_dims", c.head_dims);
    c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
    c.lr = j.value("lr", c.lr);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.lr_decay_epochs = j.value("lr_decay_epochs", c.lr_decay_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.window = j.value("window", c.window);
    c.h_min = j.value("h_min", c.h_min);
    c.h_max = j.value("h_max", c.h_max);
    return c;
  }
};

template <typename T>
class PolicyT {
 public:
  using G = GraphT<T>;
  using Var = typename G::Var;

  PolicyT(const PolicyConfig& cfg, uint64_t init_seed)
      : cfg_(cfg), params_(derive_rng(init_seed, "policy/init").next_u64()) {
    wrist_enc_ = ConvEncoder<T>(params_, "wrist_enc", cfg.image_size, 3, cfg.encoder_channels,
                                cfg.image_feature_dim);
    if (cfg.variant == Variant::kGoalConditionedBC) {
      left_enc_ = ConvEncoder<T>(params_, "left_enc", cfg.image_size, 3, cfg.encoder_channels,
                                 cfg.image_feature_dim);
      right_enc_ = ConvEncoder<T>(params_, "right_enc", cfg.image_size, 3, cfg.encoder_channels,
                                  cfg.image_feature_dim);
    }
    proprio_mlp_ = MlpLayer<T>(params_, "proprio_mlp", 4, {cfg.proprio_feature_dim},
                               cfg.proprio_feature_dim);
    token_proj_ = LinearLayer<T>(params_, "token_proj", cfg.token_parts_width(), cfg.gpt_embed);
    pos_emb_ = &params_.create("pos_emb", {cfg.gpt_block, cfg.gpt_embed},
                               ParamStoreT<T>::Init::Normal002);
    for (int i = 0; i < cfg.gpt_layers; ++i)
      blocks_.emplace_back(params_, "gpt.block" + std::to_string(i), cfg.gpt_embed, cfg.gpt_heads,
                           cfg.gpt_mlp_mult);
    final_ln_ = LayerNormLayer<T>(params_, "gpt.ln_f", cfg.gpt_embed);
    head_ = MlpLayer<T>(params_, "action_head", cfg.gpt_embed, cfg.head_dims,
                        gmm_head_width(cfg.gmm_modes, cfg.action_dim));
  }

  const PolicyConfig& config() const { return cfg_; }
  ParamStoreT<T>& params() { return params_; }
  const ParamStoreT<T>& params() const { return params_; }
  uint64_t checksum() const { return params_.checksum(); }

  // Token parts -> [N, token_parts_width]. Rows are window-flattened steps.
  Var token_parts_g(G& g, const data::PolicyBatch& b) const {
    auto wrist = wrist_enc_.forward(g, g.input(cast_in(b.wrist)));
    auto prop = proprio_mlp_.forward(g, g.input(cast_in(b.proprio)));
    if (cfg_.variant == Variant::kPlanGuided) {
      return g.concat_cols({wrist, prop, g.input(cast_in(b.plans))});
    }
    auto obs_l = left_enc_.forward(g, g.input(cast_in(b.obs_left)));
    auto obs_r = right_enc_.forward(g, g.input(cast_in(b.obs_right)));
    // One goal pair per window, repeated across the window positions.
    auto goal_l = left_enc_.forward(g, g.input(cast_in(b.goal_left)));
    auto goal_r = right_enc_.forward(g, g.input(cast_in(b.goal_right)));
    auto goal = g.concat_cols({goal_l, goal_r});           // [B, 2F]
    auto tiled = g.reshape(g.tile_mid(goal, b.window), {b.batch * b.window, 2 * cfg_.image_feature_dim});
    return g.concat_cols({wrist, prop, obs_l, obs_r, tiled});
  }

  // Full-window forward: per-position action mixtures, causal.
  GmmVars<T> forward_g(G& g, Var token_parts, int batch, int window, Rng& dropout_rng,
                       bool train) const {
    require(window >= 1 && window <= cfg_.gpt_block, Err::SequenceTooLong,
            "window exceeds the block size");
    auto tokens = token_proj_.forward(g, token_parts);  // [B*T, D]
    auto pos = g.slice_rows(g.param(&pos_emb_->value, &pos_emb_->grad), 0, window);  // [T,D]
    auto x = g.reshape(tokens, {batch, window, cfg_.gpt_embed});
    // Positional embeddings tiled over the batch: [T,D] -> [B,T,D].
    auto pos_b = g.reshape(g.tile_mid(g.reshape(pos, {1, window * cfg_.gpt_embed}), batch),
                           {batch, window, cfg_.gpt_embed});
    x = g.add(x, pos_b);
    x = g.dropout(x, cfg_.gpt_dropout, dropout_rng, train);
    for (const auto& blk : blocks_) x = blk.forward(g, x, cfg_.gpt_dropout, dropout_rng, train);
    auto flat = g.reshape(x, {batch * window, cfg_.gpt_embed});
    auto normed = final_ln_.forward(g, flat);
    auto head = head_.forward(g, normed);  // [B*T, K+2KD]
    return gmm_vars_from_head<T>(g, head, cfg_.gmm_modes, cfg_.action_dim,
                                 static_cast<T>(cfg_.gmm_min_std));
  }

  // Mean action NLL over all window positions.
  Var loss_g(G& g, const data::PolicyBatch& b, Rng& dropout_rng, bool train = true) const {
    auto parts = token_parts_g(g, b);
    auto dist = forward_g(g, parts, b.batch, b.window, dropout_rng, train);
    auto nll = gmm_nll_g<T>(g, dist, g.input(cast_in(b.actions)));
    return g.mean_all(nll);
  }

  // Eval-mode forward over a context of precomputed token parts:
  // parts [t, token_parts_width] -> action mixture at the last position.
  GmmParams forward_last(const Tensor& parts_rows) const
    requires std::is_same_v<T, float>
  {
    int t = parts_rows.dim(0);
    require(t >= 1 && t <= cfg_.gpt_block, Err::SequenceTooLong, "context exceeds block size");
    Graph g(false);
    Rng dummy(0);
    auto dist = forward_g(g, g.input(parts_rows), 1, t, dummy, false);
    // Extract the mixture at the final position.
    const Tensor& logits = g.val(dist.logits);
    const Tensor& means = g.val(dist.means);
    const Tensor& stds = g.val(dist.stds);
    int K = cfg_.gmm_modes, D = cfg_.action_dim;
    GmmParams p;
    p.weights = Tensor({K});
    p.means = Tensor({K, D});
    p.stds = Tensor({K, D});
    int last = t - 1;
    float mx = logits.at2(last, 0);
    for (int k = 1; k < K; ++k) mx = std::max(mx, logits.at2(last, k));
    float sum = 0;
    for (int k = 0; k < K; ++k) {
      p.weights[k] = std::exp(logits.at2(last, k) - mx);
      sum += p.weights[k];
    }
    for (int k = 0; k < K; ++k) p.weights[k] /= sum;
    for (int k = 0; k < K; ++k)
      for (int dcol = 0; dcol < D; ++dcol) {
        p.means[static_cast<int64_t>(k) * D + dcol] = means[(static_cast<int64_t>(last) * K + k) * D + dcol];
        p.stds[static_cast<int64_t>(k) * D + dcol] = stds[(static_cast<int64_t>(last) * K + k) * D + dcol];
      }
    return p;
  }

  // Single-row eval encoders for closed-loop control.
  Tensor wrist_features(const Tensor& img) const
    requires std::is_same_v<T, float>
  {
    Graph g(false);
    auto f = wrist_enc_.forward(g, g.input(img.reshaped({1, 3, img.dim(1), img.dim(2)})));
    return g.val(f);
  }

  Tensor proprio_features(const Tensor& e_row) const
    requires std::is_same_v<T, float>
  {
    Graph g(false);
    auto f = proprio_mlp_.forward(g, g.input(e_row.reshaped({1, 4})));
    return g.val(f);
  }

  Tensor obs_pair_features(const Tensor& left, const Tensor& right) const
    requires std::is_same_v<T, float>
  {
    require(cfg_.variant == Variant::kGoalConditionedBC, Err::ShapeMismatch,
            "obs encoders exist on the goal-conditioned baseline only");
    Graph g(false);
    auto fl = left_enc_.forward(g, g.input(left.reshaped({1, 3, left.dim(1), left.dim(2)})));
    auto fr = right_enc_.forward(g, g.input(right.reshaped({1, 3, right.dim(1), right.dim(2)})));
    auto f = g.concat_cols({fl, fr});
    return g.val(f);
  }

 private:
  static TensorT<T> cast_in(const Tensor& t) {
    if constexpr (std::is_same_v<T, float>) {
      return t;
    } else {
      return t.template cast<T>();
    }
  }

  PolicyConfig cfg_;
  ParamStoreT<T> params_;
  ConvEncoder<T> wrist_enc_, left_enc_, right_enc_;
  MlpLayer<T> proprio_mlp_;
  LinearLayer<T> token_proj_;
  typename ParamStoreT<T>::Entry* pos_emb_ = nullptr;
  std::vector<TransformerBlock<T>> blocks_;
  LayerNormLayer<T> final_ln_;
  MlpLayer<T> head_;
};

using Policy = PolicyT<float>;

// Rolling evaluation context: the last block-size steps' token parts.
class RollingContext {
 public:
  explicit RollingContext(int block, int width) : block_(block), width_(width) {}

  void push(const Tensor& parts_row) {
    require(parts_row.numel() == width_, Err::ShapeMismatch, "token parts width mismatch");
    rows_.push_back(parts_row);
    if (static_cast<int>(rows_.size()) > block_) rows_.pop_front();
  }

  void clear() { rows_.clear(); }
  int size() const { return static_cast<int>(rows_.size()); }

  Tensor matrix() const {
    Tensor m({static_cast<int>(rows_.size()), width_});
    for (size_t i = 0; i < rows_.size(); ++i)
      std::copy(rows_[i].data(), rows_[i].data() + width_, m.data() + static_cast<int64_t>(i) * width_);
    return m;
  }

 private:
  int block_;
  int width_;
  std::deque<Tensor> rows_;
};

// One closed-loop action. The plan-guided path recomputes the latent plan
// from the frozen planner every control step; the baseline encodes the goal
// pair directly. Deterministic mode takes the top-mode mean.
struct ActInputs {
  Tensor obs_left, obs_right;  // [3,H,W]
  Tensor wrist;
  Tensor proprio_row;          // [4]
  Tensor goal_feat;            // planner goal features [1,2F] (plan-guided)
  Tensor goal_left, goal_right;  // goal frames (gc_bc)
};

inline sim::Action act(const Policy& policy, planner::FrozenPlanner* frozen, RollingContext& ctx,
                       const ActInputs& in, double max_speed, bool deterministic = true,
                       Rng* sample_rng = nullptr) {
  const PolicyConfig& cfg = policy.config();
  Tensor wrist_f = policy.wrist_features(in.wrist);
  Tensor prop_f = policy.proprio_features(in.proprio_row);
  Tensor parts({1, cfg.token_parts_width()});
  int off = 0;
  auto put = [&](const Tensor& row) {
    std::copy(row.data(), row.data() + row.numel(), parts.data() + off);
    off += static_cast<int>(row.numel());
  };
  put(wrist_f);
  put(prop_f);
  if (cfg.variant == Variant::kPlanGuided) {
    require(frozen != nullptr, Err::ShapeMismatch, "plan-guided policy needs a planner");
    Tensor plan = frozen->plan_from_frames(in.obs_left, in.obs_right, in.goal_feat);
    put(plan);
  } else {
    Tensor obs_f = policy.obs_pair_features(in.obs_left, in.obs_right);
    Tensor goal_f = policy.obs_pair_features(in.goal_left, in.goal_right);
    put(obs_f);
    put(goal_f);
  }
  ctx.push(parts.reshaped({cfg.token_parts_width()}));
  GmmParams dist = policy.forward_last(ctx.matrix());
  Tensor a = deterministic || !sample_rng ? gmm_mode_mean(dist) : gmm_sample(dist, *sample_rng);
  // Normalized delta -> meters, clamped to the speed limit.
  Vec3 d{a[0] * max_speed, a[1] * max_speed, a[2] * max_speed};
  double n = d.norm();
  if (n > max_speed) d = d * (max_speed / n);
  sim::Action out;
  out.delta = d;
  out.gripper = a[3] > 0.5f ? sim::GripperCmd::kClose : sim::GripperCmd::kOpen;
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct PolicyTrainOpts {
  uint64_t seed = 0;
  int log_every = 25;
  const char* progress_tag = nullptr;
};

inline planner::TrainStats train_policy(Policy& policy, const data::Dataset& demo_ds,
                                        planner::FrozenPlanner* frozen,
                                        const PolicyTrainOpts& opts, Rng& batch_rng,
                                        Rng& dropout_rng, int start_step = 0) {
  const PolicyConfig& cfg = policy.config();
  bool gcbc = cfg.variant == Variant::kGoalConditionedBC;
  require(gcbc || frozen, Err::ShapeMismatch, "plan-guided training needs a frozen planner");
  data::PolicyBatchOpts bo;
  bo.batch_size = cfg.batch_size;
  bo.window = cfg.window;
  bo.h_min = cfg.h_min;
  bo.h_max = cfg.h_max;
  bo.plan_dim = cfg.plan_dim;
  bo.max_speed = sim::Embodiment::robot().max_speed;
  bo.with_obs_goal = gcbc;
  data::PlanFn plan_fn;
  if (!gcbc)
    plan_fn = [frozen](const data::EpisodeHandle& ep, int t, int goal_t) {
      return frozen->plan_for(ep, t, goal_t);
    };
  uint64_t frozen_sum_before = frozen ? frozen->checksum() : 0;
  int total = cfg.epochs * cfg.steps_per_epoch;
  planner::TrainStats stats;
  std::vector<double> window;
  for (int step = start_step; step < total; ++step) {
    // Stepwise decay at the configured epoch boundaries.
    double lr = cfg.lr;
    int epoch = step / std::max(1, cfg.steps_per_epoch);
    for (int de : cfg.lr_decay_epochs)
      if (epoch >= de) lr *= cfg.lr_decay_factor;
    data::PolicyBatch batch = data::make_policy_batch(demo_ds, plan_fn, bo, batch_rng);
    policy.params().zero_grads();
    Graph g(true);
    auto loss_var = policy.loss_g(g, batch, dropout_rng, true);
    double loss = g.val(loss_var)[0];
    if (!std::isfinite(loss))
      fail(Err::NonFiniteLoss, "policy loss non-finite at step " + std::to_string(step));
    g.backward(loss_var);
    require(policy.params().grads_finite(), Err::NonFiniteLoss,
            "policy gradient non-finite at step " + std::to_string(step));
    policy.params().adam_step(lr);
    window.push_back(loss);
    if (static_cast<int>(window.size()) > 100) window.erase(window.begin());
    if (step % opts.log_every == 0 || step + 1 == total) {
      stats.metric_log.push_back({{"step", step}, {"loss", loss}, {"lr", lr}});
      if (opts.progress_tag)
        std::fprintf(stderr, "[%s] step %d/%d loss %.4f\n", opts.progress_tag, step, total, loss);
    }
    stats.final_loss = loss;
    stats.steps = step + 1;
  }
  double acc = 0;
  for (double v : window) acc += v;
  stats.last_window_mean = window.empty() ? 0 : acc / double(window.size());
  if (frozen)
    require(frozen->checksum() == frozen_sum_before, Err::ShapeMismatch,
            "frozen planner parameters changed during policy training");
  return stats;
}

inline void save_policy(const std::string& path, Policy& policy, const planner::TrainStats& stats,
                        uint64_t seed, const Rng& batch_rng, const Rng& dropout_rng,
                        uint64_t planner_hash,
                        const nlohmann::ordered_json& extra_in = nlohmann::ordered_json::object()) {
  ArchiveHeader hdr;
  hdr.version = "policy.v1";
  hdr.config = policy.config().to_json();
  hdr.step = stats.steps;
  hdr.metrics = stats.metric_log;
  hdr.extra = extra_in;
  hdr.extra["seed"] = seed;
  hdr.extra["planner_hash"] = hash_hex(planner_hash);
  auto ds = dropout_rng.save();
  hdr.extra["dropout_rng"] = {{"state", ds.state}, {"inc", ds.inc}, {"has_spare", ds.has_spare},
                              {"spare", ds.spare}};
  hdr.adam_t = policy.params().adam_t();
  hdr.rng = batch_rng.save();
  save_checkpoint(path, hdr, policy.params());
}

struct LoadedPolicy {
  Policy model;
  ArchiveHeader header;
};

inline LoadedPolicy load_policy(const std::string& path) {
  ArchiveHeader peek = peek_checkpoint(path);
  require(peek.version == "policy.v1", Err::CorruptManifest,
          "expected policy.v1 checkpoint, got " + peek.version);
  PolicyConfig cfg = PolicyConfig::from_json(peek.config);
  uint64_t seed = peek.extra.value("seed", uint64_t(0));
  LoadedPolicy out{Policy(cfg, seed), {}};
  out.header = load_checkpoint(path, out.model.params());
  return out;
}

}  // namespace playmimic::policy
