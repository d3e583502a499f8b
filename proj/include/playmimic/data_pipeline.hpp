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

#include <functional>
#include <vector>

#include "playmimic/episode.hpp"
#include "playmimic/error.hpp"
#include "playmimic/rng.hpp"
#include "playmimic/tensor.hpp"

namespace playmimic::data {

// Goal index for observation t: t + H clamped to the final frame, H uniform
// in [h_min, h_max]. Training-time goal augmentation.
inline int sample_goal_index(int t, int length, int h_min, int h_max, Rng& rng) {
  require(h_min >= 1 && h_max >= h_min, Err::EmptyRange, "goal horizon range empty");
  require(t < length, Err::ShapeMismatch, "t beyond episode length");
  int h = h_min + static_cast<int>(rng.uniform_int(static_cast<uint32_t>(h_max - h_min + 1)));
  return std::min(t + h, length - 1);
}

// ---------------------------------------------------------------------------
// Planner batches: mixed-domain goal-conditioned trajectory samples. Domain
// tags drive the KL term. When the Bernoulli mix leaves a batch single-domain
// but the other dataset exists, a few reference frame pairs from it are
// attached so the alignment loss always sees both domains (the frames, not
// the trajectories, are what alignment consumes).
// ---------------------------------------------------------------------------

struct PlannerBatch {
  Tensor obs_left, obs_right;    // [B,3,H,W]
  Tensor goal_left, goal_right;  // [B,3,H,W]
  Tensor l_t;                    // [B,3]
  Tensor target_traj;            // [B, 3*horizon]
  std::vector<sim::Domain> domains;       // per sample
  Tensor kl_left, kl_right;      // [E,3,H,W] attached reference frames (E may be 0)
  std::vector<sim::Domain> kl_domains;

  int size() const { return obs_left.ndim() ? obs_left.dim(0) : 0; }
};

namespace detail {

inline void copy_frame(Tensor& dst, int row, const Tensor& src) {
  std::copy(src.data(), src.data() + src.numel(), dst.data() + static_cast<int64_t>(row) * src.numel());
}

struct SamplePick {
  const EpisodeHandle* ep;
  int t;
  int goal;
};

inline SamplePick pick_sample(const Dataset& ds, int h_min, int h_max, Rng& rng) {
  const EpisodeHandle& ep = ds.episode(rng.uniform_int(static_cast<uint32_t>(ds.size())));
  int t = static_cast<int>(rng.uniform_int(static_cast<uint32_t>(std::max(1, ep.length() - 1))));
  int goal = sample_goal_index(t, ep.length(), h_min, h_max, rng);
  return {&ep, t, goal};
}

}  // namespace detail

struct PlannerBatchOpts {
  int batch_size = 16;
  double mix_ratio = 1.0;
  int h_min = 20, h_max = 60;
  int horizon = 10;
  int kl_reference_frames = 8;  // per missing domain; 0 disables attachment
};

inline PlannerBatch make_planner_batch(const Dataset* play_ds, const Dataset* demo_ds,
                                       const PlannerBatchOpts& o, Rng& rng) {
  require(o.mix_ratio == 0.0 || (play_ds && !play_ds->empty()), Err::EmptyDataset,
          "play dataset required when mix_ratio > 0");
  require(demo_ds && !demo_ds->empty(), Err::EmptyDataset, "demo dataset required");
  int hw = demo_ds->episode(0).image_size();
  PlannerBatch b;
  int B = o.batch_size;
  b.obs_left = Tensor({B, 3, hw, hw});
  b.obs_right = Tensor({B, 3, hw, hw});
  b.goal_left = Tensor({B, 3, hw, hw});
  b.goal_right = Tensor({B, 3, hw, hw});
  b.l_t = Tensor({B, 3});
  b.target_traj = Tensor({B, 3 * o.horizon});
  int n_hand = 0, n_robot = 0;
  for (int i = 0; i < B; ++i) {
    bool hand = rng.uniform() < o.mix_ratio;
    const Dataset& ds = hand ? *play_ds : *demo_ds;
    auto pick = detail::pick_sample(ds, o.h_min, o.h_max, rng);
    const EpisodeHandle& ep = *pick.ep;
    detail::copy_frame(b.obs_left, i, ep.read_frame(sim::View::kLeft, pick.t));
    detail::copy_frame(b.obs_right, i, ep.read_frame(sim::View::kRight, pick.t));
    detail::copy_frame(b.goal_left, i, ep.read_frame(sim::View::kLeft, pick.goal));
    detail::copy_frame(b.goal_right, i, ep.read_frame(sim::View::kRight, pick.goal));
    Vec3 l = ep.effector(pick.t);
    b.l_t.at2(i, 0) = static_cast<float>(l.x);
    b.l_t.at2(i, 1) = static_cast<float>(l.y);
    b.l_t.at2(i, 2) = static_cast<float>(l.z);
    for (int k = 0; k < o.horizon; ++k) {
      int idx = std::min(pick.t + 1 + k, ep.length() - 1);  // pad by last point
      Vec3 p = ep.effector(idx);
      b.target_traj.at2(i, 3 * k + 0) = static_cast<float>(p.x);
      b.target_traj.at2(i, 3 * k + 1) = static_cast<float>(p.y);
      b.target_traj.at2(i, 3 * k + 2) = static_cast<float>(p.z);
    }
    b.domains.push_back(hand ? sim::Domain::kHand : sim::Domain::kRobot);
    (hand ? n_hand : n_robot)++;
  }
  // Reference frames for the alignment term when a domain is absent.
  int extra = 0;
  bool want_hand = n_hand == 0 && o.kl_reference_frames > 0 && play_ds && !play_ds->empty();
  bool want_robot = n_robot == 0 && o.kl_reference_frames > 0 && demo_ds && !demo_ds->empty();
  extra = (want_hand ? o.kl_reference_frames : 0) + (want_robot ? o.kl_reference_frames : 0);
  if (extra > 0) {
    b.kl_left = Tensor({extra, 3, hw, hw});
    b.kl_right = Tensor({extra, 3, hw, hw});
    int row = 0;
    auto attach = [&](const Dataset& ds, sim::Domain d) {
      for (int i = 0; i < o.kl_reference_frames; ++i) {
        auto pick = detail::pick_sample(ds, o.h_min, o.h_max, rng);
        detail::copy_frame(b.kl_left, row, pick.ep->read_frame(sim::View::kLeft, pick.t));
        detail::copy_frame(b.kl_right, row, pick.ep->read_frame(sim::View::kRight, pick.t));
        b.kl_domains.push_back(d);
        ++row;
      }
    };
    if (want_hand) attach(*play_ds, sim::Domain::kHand);
    if (want_robot) attach(*demo_ds, sim::Domain::kRobot);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Policy batches: windows of wrist observations, proprioception, frozen-
// planner latent plans, and normalized action targets.
// ---------------------------------------------------------------------------

struct PolicyBatch {
  // Flattened over the window: row r = sample (r / T) at offset (r % T).
  Tensor wrist;    // [B*T,3,H,W]
  Tensor proprio;  // [B*T,4] effector xyz + gripper
  Tensor plans;    // [B*T,plan_dim]
  Tensor actions;  // [B*T,4] normalized delta + gripper target
  // Goal-conditioned baseline extras (empty unless requested).
  Tensor obs_left, obs_right;    // [B*T,3,H,W]
  Tensor goal_left, goal_right;  // [B,3,H,W] one goal pair per window
  int batch = 0;
  int window = 0;
};

// Produces the latent plan for (episode, t, goal_t). Implemented by the
// frozen planner; a function type keeps this module independent of it.
using PlanFn = std::function<Tensor(const EpisodeHandle&, int t, int goal_t)>;

struct PolicyBatchOpts {
  int batch_size = 16;
  int window = 10;
  int h_min = 20, h_max = 60;
  int plan_dim = 128;
  double max_speed = 0.025;
  bool with_obs_goal = false;  // goal-conditioned baseline inputs
};

inline PolicyBatch make_policy_batch(const Dataset& demo_ds, const PlanFn& plan_fn,
                                     const PolicyBatchOpts& o, Rng& rng) {
  require(!demo_ds.empty(), Err::EmptyDataset, "demo dataset empty");
  for (const auto& ep : demo_ds.episodes()) {
    require(ep.robot(), Err::ShapeMismatch, "policy training needs robot episodes");
    require(ep.length() >= o.window, Err::WindowTooLong,
            "episode shorter than the training window: " + ep.dir());
  }
  int hw = demo_ds.episode(0).image_size();
  int B = o.batch_size, T = o.window;
  PolicyBatch b;
  b.batch = B;
  b.window = T;
  b.wrist = Tensor({B * T, 3, hw, hw});
  b.proprio = Tensor({B * T, 4});
  if (plan_fn) b.plans = Tensor({B * T, o.plan_dim});
  b.actions = Tensor({B * T, 4});
  if (o.with_obs_goal) {
    b.obs_left = Tensor({B * T, 3, hw, hw});
    b.obs_right = Tensor({B * T, 3, hw, hw});
    b.goal_left = Tensor({B, 3, hw, hw});
    b.goal_right = Tensor({B, 3, hw, hw});
  }
  for (int i = 0; i < B; ++i) {
    const EpisodeHandle& ep = demo_ds.episode(rng.uniform_int(static_cast<uint32_t>(demo_ds.size())));
    int start = static_cast<int>(rng.uniform_int(static_cast<uint32_t>(ep.length() - T + 1)));
    int win_goal = -1;
    if (o.with_obs_goal) {
      win_goal = sample_goal_index(start + T - 1, ep.length(), o.h_min, o.h_max, rng);
      detail::copy_frame(b.goal_left, i, ep.read_frame(sim::View::kLeft, win_goal));
      detail::copy_frame(b.goal_right, i, ep.read_frame(sim::View::kRight, win_goal));
    }
    for (int k = 0; k < T; ++k) {
      int t = start + k;
      int row = i * T + k;
      detail::copy_frame(b.wrist, row, ep.read_frame(sim::View::kWrist, t));
      Vec3 e = ep.effector(t);
      b.proprio.at2(row, 0) = static_cast<float>(e.x);
      b.proprio.at2(row, 1) = static_cast<float>(e.y);
      b.proprio.at2(row, 2) = static_cast<float>(e.z);
      b.proprio.at2(row, 3) = t > 0 ? ep.gripper01(t - 1) : 0.0f;
      if (plan_fn) {
        int goal_t = sample_goal_index(t, ep.length(), o.h_min, o.h_max, rng);
        Tensor p = plan_fn(ep, t, goal_t);
        require(p.numel() == o.plan_dim, Err::ShapeMismatch, "plan width mismatch");
        std::copy(p.data(), p.data() + p.numel(), b.plans.data() + static_cast<int64_t>(row) * o.plan_dim);
      }
      if (o.with_obs_goal) {
        detail::copy_frame(b.obs_left, row, ep.read_frame(sim::View::kLeft, t));
        detail::copy_frame(b.obs_right, row, ep.read_frame(sim::View::kRight, t));
      }
      auto a = ep.action_target(t, o.max_speed);
      for (int j = 0; j < 4; ++j) b.actions.at2(row, j) = a[static_cast<size_t>(j)];
    }
  }
  return b;
}

}  // namespace playmimic::data
