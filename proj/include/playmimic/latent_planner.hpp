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

#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "playmimic/data_pipeline.hpp"
#include "playmimic/gmm.hpp"
#include "playmimic/nn.hpp"

namespace playmimic::planner {

// Goal-conditioned latent plan model: per-view residual encoders (shared
// between observation and goal images), a plan MLP, and a GMM decoder over
// the flattened future effector trajectory.
struct PlannerConfig {
  int image_size = 64;
  int image_feature_dim = 64;
  int plan_dim = 128;
  std::vector<int> mlp_dims{400, 400};
  int gmm_modes = 5;
  float gmm_min_std = 1e-4f;
  std::string gmm_std_activation = "softplus";
  double kl_weight = 1000.0;
  double var_floor = 1e-6;
  int traj_horizon = 10;
  std::vector<int> encoder_channels{12, 24, 32, 32};

  double lr = 1e-4;
  std::string lr_decay = "none";
  int batch_size = 16;
  int epochs = 1000;
  int steps_per_epoch = 100;
  double mix_ratio = 1.0;
  int h_min = 200, h_max = 600;
  int kl_reference_frames = 8;

  int traj_dim() const { return 3 * traj_horizon; }

  nlohmann::ordered_json to_json() const {
    return {{"image_size", image_size},
            {"image_feature_dim", image_feature_dim},
            {"plan_dim", plan_dim},
            {"mlp_dims", mlp_dims},
            {"gmm_modes", gmm_modes},
            {"gmm_min_std", gmm_min_std},
            {"gmm_std_activation", gmm_std_activation},
            {"kl_weight", kl_weight},
            {"var_floor", var_floor},
            {"traj_horizon", traj_horizon},
            {"encoder_channels", encoder_channels},
            {"lr", lr},
            {"lr_decay", lr_decay},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"steps_per_epoch", steps_per_epoch},
            {"mix_ratio", mix_ratio},
            {"h_min", h_min},
            {"h_max", h_max},
            {"kl_reference_frames", kl_reference_frames}};
  }

  static PlannerConfig from_json(const nlohmann::json& j) {
    PlannerConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.image_feature_dim = j.value("image_feature_dim", c.image_feature_dim);
    c.plan_dim = j.value("plan_dim", c.plan_dim);
    c.mlp_dims = j.value("mlp_dims", c.mlp_dims);
    c.gmm_modes = j.value("gmm_modes", c.gmm_modes);
    c.gmm_min_std = j.value("gmm_min_std", c.gmm_min_std);
    c.gmm_std_activation = j.value("gmm_std_activation", c.gmm_std_activation);
    c.kl_weight = j.value("kl_weight", c.kl_weight);
    c.var_floor = j.value("var_floor", c.var_floor);
    c.traj_horizon = j.value("traj_horizon", c.traj_horizon);
    c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
    c.lr = j.value("lr", c.lr);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.mix_ratio = j.value("mix_ratio", c.mix_ratio);
    c.h_min = j.value("h_min", c.h_min);
    c.h_max = j.value("h_max", c.h_max);
    c.kl_reference_frames = j.value("kl_reference_frames", c.kl_reference_frames);
    return c;
  }
};

template <typename T>
class LatentPlannerT {
 public:
  using G = GraphT<T>;
  using Var = typename G::Var;

  LatentPlannerT(const PlannerConfig& cfg, uint64_t init_seed)
      : cfg_(cfg), params_(derive_rng(init_seed, "planner/init").next_u64()) {
    enc_left_ = ConvEncoder<T>(params_, "enc_left", cfg.image_size, 3, cfg.encoder_channels,
                               cfg.image_feature_dim);
    enc_right_ = ConvEncoder<T>(params_, "enc_right", cfg.image_size, 3, cfg.encoder_channels,
                                cfg.image_feature_dim);
    plan_mlp_ = MlpLayer<T>(params_, "plan_mlp", 4 * cfg.image_feature_dim, cfg.mlp_dims,
                            cfg.plan_dim);
    traj_decoder_ = MlpLayer<T>(params_, "traj_decoder", cfg.plan_dim + 3, cfg.mlp_dims,
                                gmm_head_width(cfg.gmm_modes, cfg.traj_dim()));
  }

  const PlannerConfig& config() const { return cfg_; }
  ParamStoreT<T>& params() { return params_; }
  const ParamStoreT<T>& params() const { return params_; }
  uint64_t checksum() const { return params_.checksum(); }

  // ---- graph builders ----

  void check_images(const TensorT<T>& imgs) const {
    require(imgs.ndim() == 4 && imgs.dim(1) == 3 && imgs.dim(2) == cfg_.image_size &&
                imgs.dim(3) == cfg_.image_size,
            Err::BadImageShape, "expected [N,3," + std::to_string(cfg_.image_size) + "," +
                                    std::to_string(cfg_.image_size) + "], got " + imgs.shape_str());
  }

  // [N,3,H,W] x2 -> [N, 2*feature_dim]
  Var encode_views_g(G& g, Var left, Var right) const {
    check_images(g.val(left));
    check_images(g.val(right));
    auto fl = enc_left_.forward(g, left);
    auto fr = enc_right_.forward(g, right);
    return g.concat_cols({fl, fr});
  }

  Var plan_g(G& g, Var obs_feat, Var goal_feat) const {
    return plan_mlp_.forward(g, g.concat_cols({obs_feat, goal_feat}));
  }

  GmmVars<T> decode_g(G& g, Var plan, Var l_t) const {
    auto head = traj_decoder_.forward(g, g.concat_cols({plan, l_t}));
    return gmm_vars_from_head<T>(g, head, cfg_.gmm_modes, cfg_.traj_dim(),
                                 static_cast<T>(cfg_.gmm_min_std));
  }

  struct LossParts {
    Var total;
    Var nll;
    Var kl;      // invalid when the batch is single-domain
    bool has_kl = false;
  };

  // Joint objective: mean trajectory NLL plus lambda times the cross-domain
  // feature-moment KL. The KL sees the batch observation features split by
  // domain tag, extended by any attached reference frames.
  LossParts loss_g(G& g, const data::PlannerBatch& batch, double lambda) const {
    auto obs_l = g.input(cast_in(batch.obs_left));
    auto obs_r = g.input(cast_in(batch.obs_right));
    auto goal_l = g.input(cast_in(batch.goal_left));
    auto goal_r = g.input(cast_in(batch.goal_right));
    auto feats_obs = encode_views_g(g, obs_l, obs_r);
    auto feats_goal = encode_views_g(g, goal_l, goal_r);
    auto plan = plan_g(g, feats_obs, feats_goal);
    auto dist = decode_g(g, plan, g.input(cast_in(batch.l_t)));
    auto nll = g.mean_all(gmm_nll_g<T>(g, dist, g.input(cast_in(batch.target_traj))));

    LossParts parts;
    parts.nll = nll;
    parts.total = nll;
    if (lambda != 0.0) {
      Var all_feats = feats_obs;
      std::vector<sim::Domain> tags = batch.domains;
      if (batch.kl_left.numel() > 0) {
        auto extra = encode_views_g(g, g.input(cast_in(batch.kl_left)), g.input(cast_in(batch.kl_right)));
        all_feats = g.concat_rows(all_feats, extra);
        tags.insert(tags.end(), batch.kl_domains.begin(), batch.kl_domains.end());
      }
      std::vector<int> hand_rows, robot_rows;
      for (size_t i = 0; i < tags.size(); ++i)
        (tags[i] == sim::Domain::kHand ? hand_rows : robot_rows).push_back(static_cast<int>(i));
      if (hand_rows.size() >= 2 && robot_rows.size() >= 2) {
        auto fr = g.gather_rows(all_feats, robot_rows);
        auto fh = g.gather_rows(all_feats, hand_rows);
        parts.kl = kl_domain_loss_g<T>(g, fr, fh, static_cast<T>(cfg_.var_floor));
        parts.has_kl = true;
        parts.total = g.add(nll, g.scale(parts.kl, static_cast<T>(lambda)));
      }
    }
    return parts;
  }

  LossParts loss_g(G& g, const data::PlannerBatch& batch) const {
    return loss_g(g, batch, cfg_.kl_weight);
  }

  // ---- eval-mode paths ----

  TensorT<T> encode_views(const TensorT<T>& left, const TensorT<T>& right) const {
    G g(false);
    auto f = encode_views_g(g, g.input(left), g.input(right));
    return g.val(f);
  }

  TensorT<T> plan(const TensorT<T>& obs_feat, const TensorT<T>& goal_feat) const {
    G g(false);
    auto p = plan_g(g, g.input(obs_feat), g.input(goal_feat));
    return g.val(p);
  }

  // Single-sample decode to runtime mixture parameters.
  GmmParams decode_trajectory_dist(const TensorT<T>& plan_row, const Vec3& l) const
    requires std::is_same_v<T, float>
  {
    G g(false);
    Tensor lt({1, 3}, {static_cast<float>(l.x), static_cast<float>(l.y), static_cast<float>(l.z)});
    auto plan2d = g.input(plan_row.reshaped({1, static_cast<int>(plan_row.numel())}));
    auto head = traj_decoder_.forward(g, g.concat_cols({plan2d, g.input(lt)}));
    return gmm_from_head(g.val(head).data(), cfg_.gmm_modes, cfg_.traj_dim(), cfg_.gmm_min_std);
  }

 private:
  static TensorT<T> cast_in(const Tensor& t) {
    if constexpr (std::is_same_v<T, float>) {
      return t;
    } else {
      return t.template cast<T>();
    }
  }

  PlannerConfig cfg_;
  ParamStoreT<T> params_;
  ConvEncoder<T> enc_left_, enc_right_;
  MlpLayer<T> plan_mlp_, traj_decoder_;
};

using LatentPlanner = LatentPlannerT<float>;

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainStats {
  int steps = 0;
  double final_loss = 0;
  double first_window_mean = 0;  // mean loss over the first smoothing window
  double last_window_mean = 0;
  nlohmann::ordered_json metric_log = nlohmann::ordered_json::array();
};

struct PlannerTrainOpts {
  uint64_t seed = 0;
  int log_every = 25;
  double lambda_override = -1.0;  // < 0: use config kl_weight
  const char* progress_tag = nullptr;  // stderr progress when set
};

// batch_rng is owned by the caller so checkpoints can capture and restore it
// (resume then continues bit-identically). start_step > 0 resumes.
inline TrainStats train_planner(LatentPlanner& model, const data::Dataset* play_ds,
                                const data::Dataset& demo_ds, const PlannerTrainOpts& opts,
                                Rng& batch_rng, int start_step = 0) {
  const PlannerConfig& cfg = model.config();
  double lambda = opts.lambda_override >= 0 ? opts.lambda_override : cfg.kl_weight;
  data::PlannerBatchOpts bo;
  bo.batch_size = cfg.batch_size;
  bo.mix_ratio = cfg.mix_ratio;
  bo.h_min = cfg.h_min;
  bo.h_max = cfg.h_max;
  bo.horizon = cfg.traj_horizon;
  bo.kl_reference_frames = lambda == 0.0 ? 0 : cfg.kl_reference_frames;
  int total = cfg.epochs * cfg.steps_per_epoch;
  TrainStats stats;
  std::vector<double> window;
  for (int step = start_step; step < total; ++step) {
    data::PlannerBatch batch = data::make_planner_batch(play_ds, &demo_ds, bo, batch_rng);
    model.params().zero_grads();
    Graph g(true);
    auto parts = model.loss_g(g, batch, lambda);
    double loss = g.val(parts.total)[0];
    if (!std::isfinite(loss)) {
      fail(Err::NonFiniteLoss, "planner loss non-finite at step " + std::to_string(step));
    }
    g.backward(parts.total);
    require(model.params().grads_finite(), Err::NonFiniteLoss,
            "planner gradient non-finite at step " + std::to_string(step));
    model.params().adam_step(cfg.lr);
    if (step < 100) {
      stats.first_window_mean += loss / std::min(100, total);
    }
    window.push_back(loss);
    if (static_cast<int>(window.size()) > 100) window.erase(window.begin());
    if (step % opts.log_every == 0 || step + 1 == total) {
      nlohmann::ordered_json entry;
      entry["step"] = step;
      entry["loss"] = loss;
      entry["nll"] = g.val(parts.nll)[0];
      if (parts.has_kl) entry["kl"] = g.val(parts.kl)[0];
      stats.metric_log.push_back(entry);
      if (opts.progress_tag)
        std::fprintf(stderr, "[%s] step %d/%d loss %.4f\n", opts.progress_tag, step, total, loss);
    }
    stats.final_loss = loss;
    stats.steps = step + 1;
  }
  double acc = 0;
  for (double v : window) acc += v;
  stats.last_window_mean = window.empty() ? 0 : acc / double(window.size());
  return stats;
}

inline void save_planner(const std::string& path, LatentPlanner& model, const TrainStats& stats,
                         uint64_t seed, const Rng& batch_rng,
                         const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
  ArchiveHeader hdr;
  hdr.version = "planner.v1";
  hdr.config = model.config().to_json();
  hdr.step = stats.steps;
  hdr.metrics = stats.metric_log;
  hdr.extra = extra;
  hdr.extra["seed"] = seed;
  hdr.adam_t = model.params().adam_t();
  hdr.rng = batch_rng.save();
  save_checkpoint(path, hdr, model.params());
}

struct LoadedPlanner {
  LatentPlanner model;
  ArchiveHeader header;
};

inline LoadedPlanner load_planner(const std::string& path) {
  ArchiveHeader peek = peek_checkpoint(path);
  require(peek.version == "planner.v1", Err::CorruptManifest,
          "expected planner.v1 checkpoint, got " + peek.version);
  PlannerConfig cfg = PlannerConfig::from_json(peek.config);
  uint64_t seed = peek.extra.value("seed", uint64_t(0));
  LoadedPlanner out{LatentPlanner(cfg, seed), {}};
  out.header = load_checkpoint(path, out.model.params());
  return out;
}

// ---------------------------------------------------------------------------
// Frozen planner: plan evaluation with per-frame feature caching. Safe for
// concurrent readers; parameters are never touched.
// ---------------------------------------------------------------------------

class FrozenPlanner {
 public:
  explicit FrozenPlanner(LatentPlanner model) : model_(std::move(model)) {}

  const LatentPlanner& model() const { return model_; }
  const PlannerConfig& config() const { return model_.config(); }
  uint64_t checksum() const { return model_.checksum(); }

  // Observation features of one dataset frame, cached by (episode dir, t).
  Tensor obs_features(const data::EpisodeHandle& ep, int t) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      auto it = cache_.find(ep.dir());
      if (it != cache_.end() && !it->second[static_cast<size_t>(t)].empty())
        return it->second[static_cast<size_t>(t)];
    }
    Tensor l = ep.read_frame(sim::View::kLeft, t);
    Tensor r = ep.read_frame(sim::View::kRight, t);
    Tensor f = model_.encode_views(l.reshaped({1, 3, l.dim(1), l.dim(2)}),
                                   r.reshaped({1, 3, r.dim(1), r.dim(2)}));
    std::lock_guard<std::mutex> lk(mu_);
    auto& slot = cache_[ep.dir()];
    if (slot.empty()) slot.resize(static_cast<size_t>(ep.length()));
    slot[static_cast<size_t>(t)] = f;
    return f;
  }

  Tensor plan_from_features(const Tensor& obs_feat, const Tensor& goal_feat) const {
    return model_.plan(obs_feat, goal_feat);
  }

  // data::PlanFn adapter.
  Tensor plan_for(const data::EpisodeHandle& ep, int t, int goal_t) {
    Tensor obs = obs_features(ep, t);
    Tensor goal = obs_features(ep, goal_t);
    Tensor p = model_.plan(obs, goal);
    return p.reshaped({p.dim(1)});
  }

  // Eval-time plan from raw frames (fresh observation, possibly cached goal).
  Tensor plan_from_frames(const Tensor& obs_l, const Tensor& obs_r, const Tensor& goal_feat) const {
    Tensor obs = model_.encode_views(obs_l.reshaped({1, 3, obs_l.dim(1), obs_l.dim(2)}),
                                     obs_r.reshaped({1, 3, obs_r.dim(1), obs_r.dim(2)}));
    return model_.plan(obs, goal_feat);
  }

  Tensor encode_pair(const Tensor& left, const Tensor& right) const {
    return model_.encode_views(left.reshaped({1, 3, left.dim(1), left.dim(2)}),
                               right.reshaped({1, 3, right.dim(1), right.dim(2)}));
  }

  GmmParams decode_trajectory_dist(const Tensor& plan_row, const Vec3& l) const {
    return model_.decode_trajectory_dist(plan_row, l);
  }

 private:
  LatentPlanner model_;
  std::unordered_map<std::string, std::vector<Tensor>> cache_;
  std::mutex mu_;
};

}  // namespace playmimic::planner
