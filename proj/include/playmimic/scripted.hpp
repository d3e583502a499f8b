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

#include <string>
#include <vector>

#include "playmimic/episode.hpp"
#include "playmimic/stereo_geometry.hpp"
#include "playmimic/workbench_sim.hpp"

namespace playmimic::sim {

// Minimum-jerk position profile.
inline double min_jerk_s(double tau) {
  return tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
}

namespace detail {

// Records an episode while executing scripted primitives. Scripts run at 80%
// of the embodiment speed so the +/-20% speed jitter never hits the clamp.
class ScriptRunner {
 public:
  ScriptRunner(const TaskSpec* task, const Embodiment& emb, uint64_t seed, const Layout& L,
               const CameraRig& rig, int max_steps, bool jitter, double detector_dropout,
               uint64_t jitter_salt)
      : emb_(emb),
        layout_(L),
        rig_(rig),
        max_steps_(max_steps),
        jitter_(jitter),
        dropout_(detector_dropout) {
    jitter_rng_ = derive_rng(seed ^ jitter_salt, "script/jitter");
    drop_rng_ = derive_rng(seed, "script/dropout");
    if (task) {
      state_ = reset(*task, emb, seed, L);
    } else {
      Rng r = derive_rng(seed, "play/init");
      state_ = detail::sample_initial(r, L, {.lamp_on = false, .lid = 2, .pen = 1, .book = 1});
    }
    history_.push_back(state_);
  }

  const SceneState& state() const { return state_; }
  const std::vector<SceneState>& history() const { return history_; }
  const std::vector<std::string>& events() const { return events_; }
  bool budget_exhausted() const { return steps_ >= max_steps_; }
  int steps() const { return steps_; }

  void apply(const Action& a) {
    if (budget_exhausted()) return;
    frames_.push_back(render_frame(state_, emb_.domain(), rig_, layout_));
    true_xyz_.push_back(state_.effector);
    dets_l_.push_back(detect_effector(state_, View::kLeft, steps_, rig_, dropout_, &drop_rng_));
    dets_r_.push_back(detect_effector(state_, View::kRight, steps_, rig_, dropout_, &drop_rng_));
    actions_.push_back(a);
    StepResult r = step(state_, a, emb_, layout_);
    state_ = r.state;
    grip_.push_back(static_cast<int8_t>(state_.gripper_closed ? 1 : 0));
    for (auto& e : r.events) events_.push_back(std::move(e));
    history_.push_back(state_);
    ++steps_;
  }

  void hold(int n) {
    for (int i = 0; i < n && !budget_exhausted(); ++i) apply({});
  }

  void gripper(GripperCmd cmd) { apply({Vec3{}, cmd}); }

  Vec3 jitter_point(const Vec3& p, double sigma, double max_norm) {
    if (!jitter_) return p;
    Vec3 d{jitter_rng_.normal(0, sigma), jitter_rng_.normal(0, sigma), jitter_rng_.normal(0, sigma)};
    double n = d.norm();
    if (n > max_norm) d = d * (max_norm / n);
    return layout_.clamp_workspace(p + d);
  }

  // Open-loop minimum-jerk move; peak speed stays under the clamp.
  void move_to(const Vec3& target) {
    Vec3 from = state_.effector;
    double dist = distance(from, target);
    if (dist < 1e-6) return;
    double f = jitter_ ? jitter_rng_.uniform(0.8, 1.2) : 1.0;
    double speed = 0.8 * emb_.max_speed / f;
    int T = std::max(2, static_cast<int>(std::ceil(1.875 * dist / speed)));
    Vec3 prev = from;
    for (int i = 1; i <= T && !budget_exhausted(); ++i) {
      double s = min_jerk_s(double(i) / T);
      Vec3 pos = from + (target - from) * s;
      apply({pos - prev, GripperCmd::kNoop});
      prev = pos;
    }
  }

  // ---- primitives ----

  // Random staging offsets and optional detours keep trajectories diverse:
  // a stereotyped corpus would let the trajectory model ignore the goal.
  void maybe_wander(double prob) {
    if (!jitter_ || jitter_rng_.uniform() >= prob) return;
    Vec3 w{jitter_rng_.uniform(-0.20, 0.20), jitter_rng_.uniform(-0.16, 0.10),
           jitter_rng_.uniform(0.05, 0.16)};
    move_to(layout_.clamp_workspace(w));
  }

  void press(const Vec3& button) {
    double sy = jitter_ ? jitter_rng_.uniform(-0.10, -0.06) : -0.08;
    double sz = jitter_ ? jitter_rng_.uniform(0.035, 0.08) : 0.05;
    Vec3 stage = button + Vec3{0, sy, sz};
    move_to(jitter_point(stage, 0.015, 0.035));
    if (!emb_.is_hand()) gripper(GripperCmd::kClose);
    move_to(jitter_point(button, 0.01, 0.012));
    move_to(jitter_point(stage, 0.015, 0.035));
    if (!emb_.is_hand()) gripper(GripperCmd::kOpen);
  }

  void press_lamp() { press(layout_.lamp_button); }
  void toggle_lid() { press(layout_.lid_handle); }

  void pick(ObjectId obj) {
    Vec3 pos = obj == ObjectId::kPen ? state_.pen_pos : state_.book_pos;
    double sz = jitter_ ? jitter_rng_.uniform(0.05, 0.10) : 0.07;
    Vec3 stage = pos + Vec3{0, 0, sz};
    if (!emb_.is_hand() && state_.gripper_closed) gripper(GripperCmd::kOpen);
    move_to(jitter_point(stage, 0.015, 0.035));
    move_to(jitter_point(pos + Vec3{0, 0, 0.004}, 0.004, 0.011));
    gripper(GripperCmd::kClose);
    move_to(jitter_point(pos + Vec3{0, 0, sz}, 0.015, 0.035));
  }

  void place(const Vec3& slot) {
    double sz = jitter_ ? jitter_rng_.uniform(0.05, 0.10) : 0.07;
    Vec3 stage = slot + Vec3{0, 0, sz};
    move_to(jitter_point(stage, 0.015, 0.035));
    move_to(jitter_point(slot + Vec3{0, 0, 0.004}, 0.004, 0.011));
    gripper(GripperCmd::kOpen);
    move_to(jitter_point(stage, 0.015, 0.035));
  }

  // Assembles the recorded episode. Hand effector positions come from the
  // two-view tracking pipeline; robot positions from proprioception.
  data::Episode finish(const std::optional<std::string>& task_name) {
    data::Episode ep;
    ep.domain = emb_.domain();
    ep.frames = std::move(frames_);
    ep.gripper_state = std::move(grip_);
    ep.task_name = task_name;
    if (emb_.is_hand()) {
      stereo::Trajectory3D traj = stereo::track_trajectory(rig_, dets_l_, dets_r_);
      ep.effector_xyz = std::move(traj.points);
    } else {
      ep.effector_xyz = std::move(true_xyz_);
      ep.actions = std::move(actions_);
    }
    return ep;
  }

 private:
  Embodiment emb_;
  Layout layout_;
  CameraRig rig_;
  int max_steps_;
  bool jitter_;
  double dropout_;
  Rng jitter_rng_;
  Rng drop_rng_;
  SceneState state_;
  std::vector<SceneState> history_;
  std::vector<Frame> frames_;
  std::vector<Vec3> true_xyz_;
  std::vector<stereo::Detection2D> dets_l_, dets_r_;
  std::vector<Action> actions_;
  std::vector<int8_t> grip_;
  std::vector<std::string> events_;
  int steps_ = 0;
};

inline void run_task_script(ScriptRunner& r, const std::string& task, const Layout& L) {
  auto pen_slot = [&] { return L.box_slot; };
  r.maybe_wander(0.5);
  if (task == "desk/task1") {
    r.press_lamp();
    r.maybe_wander(0.25);
    r.pick(ObjectId::kBook);
    r.place(L.shelf_slot);
  } else if (task == "desk/task2") {
    r.press_lamp();
    r.maybe_wander(0.25);
    r.toggle_lid();
    r.pick(ObjectId::kPen);
    r.place(pen_slot());
  } else if (task == "desk/task3") {
    r.toggle_lid();
    r.maybe_wander(0.25);
    r.pick(ObjectId::kPen);
    r.place(pen_slot());
    r.maybe_wander(0.25);
    r.pick(ObjectId::kBook);
    r.place(L.shelf_slot);
  } else if (task == "desk/task4") {
    r.toggle_lid();
    r.maybe_wander(0.25);
    r.press_lamp();
  } else if (task == "desk/easy") {
    r.toggle_lid();
    r.press_lamp();
    r.maybe_wander(0.25);
    r.pick(ObjectId::kBook);
    r.place(L.shelf_slot);
  } else if (task == "desk/medium") {
    r.toggle_lid();
    r.maybe_wander(0.25);
    r.press_lamp();
    r.pick(ObjectId::kPen);
    r.place(pen_slot());
  } else if (task == "desk/hard") {
    r.press_lamp();
    r.maybe_wander(0.25);
    r.toggle_lid();
    r.pick(ObjectId::kBook);
    r.place(L.shelf_slot);
  } else {
    fail(Err::UnknownTask, task);
  }
  r.hold(2);
}

}  // namespace detail

struct ScriptedOpts {
  Layout layout = default_layout();
  CameraRig rig = default_rig();
  double detector_dropout = 0.03;
  int max_steps = 100000;
};

// Task demonstration achieving all subgoals in order, with waypoint and speed
// jitter for diversity. Resamples the jitter up to 10 times before giving up.
inline data::Episode scripted_demo(const std::string& task_name, uint64_t seed,
                                   const Embodiment& emb = Embodiment::robot(),
                                   const ScriptedOpts& opts = {},
                                   std::vector<std::string>* events_out = nullptr) {
  const TaskSpec& task = find_task(task_name);
  require(task.has_demo_script, Err::ScriptFailure, "no demonstration script for " + task_name);
  for (int attempt = 0; attempt < 10; ++attempt) {
    detail::ScriptRunner r(&task, emb, seed, opts.layout, opts.rig, opts.max_steps, true,
                           emb.is_hand() ? opts.detector_dropout : 0.0,
                           0x9e3779b97f4a7c15ull * static_cast<uint64_t>(attempt));
    detail::run_task_script(r, task_name, opts.layout);
    auto [first, ordered] = check_subgoals(r.history(), task);
    if (first && ordered && !r.budget_exhausted()) {
      if (events_out) *events_out = r.events();
      return r.finish(task_name);
    }
  }
  fail(Err::ScriptFailure, "jittered script missed a subgoal 10 times: " + task_name);
}

// Free-form play: a seeded random walk over currently legal affordances with
// idle wander segments, no task labels.
inline data::Episode scripted_play(uint64_t seed, int n_steps, const ScriptedOpts& opts = {},
                                   std::vector<std::string>* events_out = nullptr) {
  require(n_steps > 0, Err::ShapeMismatch, "n_steps must be positive");
  Embodiment emb = Embodiment::hand();
  detail::ScriptRunner r(nullptr, emb, seed, opts.layout, opts.rig, n_steps, true,
                         opts.detector_dropout, 0);
  Rng pick_rng = derive_rng(seed, "play/affordances");
  const Layout& L = opts.layout;
  while (!r.budget_exhausted()) {
    if (!r.state().held && pick_rng.uniform() < 0.2) {
      Vec3 wander{pick_rng.uniform(-0.18, 0.18), pick_rng.uniform(-0.14, 0.10),
                  pick_rng.uniform(0.05, 0.16)};
      r.move_to(wander);
      continue;
    }
    const SceneState& s = r.state();
    std::vector<int> legal;
    if (!s.held) {
      legal = {0, 1, 3};                                   // lamp, lid, pick book
      if (detail::pen_reachable(s)) legal.push_back(2);    // pick pen
    } else if (s.held == ObjectId::kPen) {
      legal = {4};                                         // place pen on table
      if (s.lid_open) legal.push_back(5);                  // place pen in box
    } else {
      legal = {6, 7};                                      // book to rack / shelf
    }
    int choice = legal[pick_rng.uniform_int(static_cast<uint32_t>(legal.size()))];
    switch (choice) {
      case 0: r.press_lamp(); break;
      case 1: r.toggle_lid(); break;
      case 2: r.pick(ObjectId::kPen); break;
      case 3: r.pick(ObjectId::kBook); break;
      case 4: {
        Vec3 spot{pick_rng.uniform(-0.15, 0.15), pick_rng.uniform(-0.12, 0.10), L.pen_home.z};
        r.place(spot);
        break;
      }
      case 5: r.place(L.box_slot); break;
      case 6: r.place(L.rack_slot); break;
      case 7: r.place(L.shelf_slot); break;
    }
  }
  if (events_out) *events_out = r.events();
  return r.finish(std::nullopt);
}

// Oracle replay of a recorded episode through the evaluation loop: feeds the
// stored actions back. Used to validate harness plumbing.
struct OracleReplayPolicy {
  const data::Episode* episode = nullptr;
  size_t cursor = 0;

  Action next() {
    if (!episode || cursor >= episode->actions.size()) return {};
    return episode->actions[cursor++];
  }
};

}  // namespace playmimic::sim
