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

#include <atomic>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "playmimic/data_pipeline.hpp"
#include "playmimic/plan_guided_policy.hpp"
#include "playmimic/scripted.hpp"

namespace playmimic::harness {

// Goal-image source: frames of a prompt video, advanced by a fixed stride and
// clamped at the final frame (the terminal goal persists).
class PromptStream {
 public:
  PromptStream() = default;
  PromptStream(const data::EpisodeHandle* episode, int start, int stride)
      : ep_(episode), cursor_(start), stride_(stride) {
    require(ep_ != nullptr, Err::EmptyDataset, "prompt stream needs an episode");
    require(start >= 0 && start < ep_->length(), Err::ShapeMismatch,
            "prompt start beyond the episode");
    require(stride >= 1, Err::ShapeMismatch, "prompt stride must be >= 1");
  }

  const data::EpisodeHandle& episode() const { return *ep_; }
  int current_index() const { return std::min(cursor_, ep_->length() - 1); }

  // Frame index for this step; advances the cursor.
  int next_index() {
    int idx = current_index();
    cursor_ = cursor_ + stride_;
    return idx;
  }

 private:
  const data::EpisodeHandle* ep_ = nullptr;
  int cursor_ = 0;
  int stride_ = 1;
};

struct RunOpts {
  int max_steps = 360;
  int prompt_start = 20;
  int prompt_stride = 1;
  bool deterministic = true;
};

struct EpisodeOutcome {
  bool subgoal_ok = false;
  bool long_ok = false;
  int steps = 0;
};

// Closed loop: render -> plan from the next goal frame -> act -> step.
// Terminates when all subgoals are done in order or at max_steps.
inline EpisodeOutcome run_episode(const policy::Policy& pol, planner::FrozenPlanner* frozen,
                                  const sim::TaskSpec& task, PromptStream prompt, uint64_t seed,
                                  const RunOpts& opts,
                                  std::vector<sim::SceneState>* history_out = nullptr) {
  sim::Embodiment emb = sim::Embodiment::robot();
  sim::SceneState state = sim::reset(task, emb, seed);
  std::vector<sim::SceneState> history{state};
  policy::RollingContext ctx(pol.config().gpt_block, pol.config().token_parts_width());
  Rng sample_rng = derive_rng(seed, "eval/action_sampling");
  bool gcbc = pol.config().variant == policy::Variant::kGoalConditionedBC;
  int goal_cached_idx = -1;
  Tensor goal_feat, goal_left, goal_right;
  EpisodeOutcome out;
  for (int step = 0; step < opts.max_steps; ++step) {
    policy::ActInputs in;
    in.obs_left = sim::render(state, sim::Domain::kRobot, sim::View::kLeft);
    in.obs_right = sim::render(state, sim::Domain::kRobot, sim::View::kRight);
    in.wrist = sim::render(state, sim::Domain::kRobot, sim::View::kWrist);
    in.proprio_row = Tensor({4}, {static_cast<float>(state.effector.x),
                                  static_cast<float>(state.effector.y),
                                  static_cast<float>(state.effector.z),
                                  state.gripper_closed ? 1.0f : 0.0f});
    int gidx = prompt.next_index();
    if (gcbc) {
      if (gidx != goal_cached_idx) {
        goal_left = prompt.episode().read_frame(sim::View::kLeft, gidx);
        goal_right = prompt.episode().read_frame(sim::View::kRight, gidx);
        goal_cached_idx = gidx;
      }
      in.goal_left = goal_left;
      in.goal_right = goal_right;
    } else {
      if (gidx != goal_cached_idx) {
        goal_feat = frozen->obs_features(prompt.episode(), gidx);
        goal_cached_idx = gidx;
      }
      in.goal_feat = goal_feat;
    }
    sim::Action a = policy::act(pol, frozen, ctx, in, emb.max_speed, opts.deterministic,
                                &sample_rng);
    state = sim::step(state, a, emb).state;
    history.push_back(state);
    auto [first, ordered] = sim::check_subgoals(history, task);
    if (ordered) break;
  }
  auto [first, ordered] = sim::check_subgoals(history, task);
  out.subgoal_ok = first;
  out.long_ok = ordered;
  out.steps = static_cast<int>(history.size()) - 1;
  if (history_out) *history_out = std::move(history);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation across tasks and trials
// ---------------------------------------------------------------------------

struct TaskResult {
  std::string task;
  int n_trials = 0;
  int subgoal_hits = 0;
  int long_hits = 0;
  double mean_steps = 0;
  std::vector<uint64_t> seeds;

  double subgoal_rate() const { return n_trials ? double(subgoal_hits) / n_trials : 0.0; }
  double long_rate() const { return n_trials ? double(long_hits) / n_trials : 0.0; }
};

struct EvalReport {
  std::vector<TaskResult> per_task;
  std::string prompt_domain;

  double all_subgoal() const {
    double s = 0;
    for (const auto& t : per_task) s += t.subgoal_rate();
    return per_task.empty() ? 0.0 : s / double(per_task.size());
  }
  double all_long() const {
    double s = 0;
    for (const auto& t : per_task) s += t.long_rate();
    return per_task.empty() ? 0.0 : s / double(per_task.size());
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json tasks = nlohmann::ordered_json::array();
    for (const auto& t : per_task) {
      tasks.push_back({{"task", t.task},
                       {"n_trials", t.n_trials},
                       {"subgoal_rate", t.subgoal_rate()},
                       {"long_horizon_rate", t.long_rate()},
                       {"mean_episode_steps", t.mean_steps},
                       {"seeds", t.seeds}});
    }
    return {{"prompt_domain", prompt_domain},
            {"per_task", tasks},
            {"all", {{"subgoal_rate", all_subgoal()}, {"long_horizon_rate", all_long()}}}};
  }

  std::string to_csv() const {
    std::string s = "task,n_trials,subgoal_rate,long_horizon_rate,mean_episode_steps\n";
    char buf[160];
    for (const auto& t : per_task) {
      std::snprintf(buf, sizeof(buf), "%s,%d,%.4f,%.4f,%.2f\n", t.task.c_str(), t.n_trials,
                    t.subgoal_rate(), t.long_rate(), t.mean_steps);
      s += buf;
    }
    std::snprintf(buf, sizeof(buf), "ALL,,%.4f,%.4f,\n", all_subgoal(), all_long());
    s += buf;
    return s;
  }
};

struct EvalOpts {
  int n_trials = 50;
  uint64_t base_seed = 0;
  int max_steps = 360;
  int prompt_start = 20;
  int prompt_stride = 1;
  int workers = 2;
  bool deterministic = true;
  std::string prompt_domain = "robot";
};

// Prompt episodes for a task in the requested domain, from a held-out
// prompt dataset.
inline std::vector<const data::EpisodeHandle*> prompts_for_task(const data::Dataset& prompts,
                                                                const std::string& task,
                                                                sim::Domain domain) {
  std::vector<const data::EpisodeHandle*> out;
  for (const auto& ep : prompts.episodes())
    if (ep.task() && *ep.task() == task && ep.domain() == domain) out.push_back(&ep);
  return out;
}

// Trials are embarrassingly parallel; results reduce in (task, trial) order
// regardless of worker scheduling.
inline EvalReport evaluate(const policy::Policy& pol, planner::FrozenPlanner* frozen,
                           const std::vector<std::string>& tasks, const data::Dataset& prompts,
                           const EvalOpts& opts) {
  require(opts.n_trials >= 1, Err::ShapeMismatch, "n_trials must be >= 1");
  sim::Domain pdom = sim::domain_from_name(opts.prompt_domain);
  struct Trial {
    int task_idx;
    int trial;
    uint64_t seed;
    EpisodeOutcome outcome;
  };
  std::vector<Trial> trials;
  std::vector<std::vector<const data::EpisodeHandle*>> task_prompts;
  for (size_t ti = 0; ti < tasks.size(); ++ti) {
    auto eps = prompts_for_task(prompts, tasks[ti], pdom);
    require(!eps.empty(), Err::EmptyDataset,
            "no " + opts.prompt_domain + " prompt episodes for " + tasks[ti]);
    task_prompts.push_back(std::move(eps));
    for (int k = 0; k < opts.n_trials; ++k) {
      uint64_t seed = fnv1a(tasks[ti], opts.base_seed * 0x9e3779b97f4a7c15ull + 0x1000 + k);
      trials.push_back({static_cast<int>(ti), k, seed, {}});
    }
  }
  RunOpts ro;
  ro.max_steps = opts.max_steps;
  ro.prompt_start = opts.prompt_start;
  ro.prompt_stride = opts.prompt_stride;
  ro.deterministic = opts.deterministic;

  std::atomic<size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      size_t i = cursor.fetch_add(1);
      if (i >= trials.size()) return;
      Trial& t = trials[i];
      const auto& eps = task_prompts[static_cast<size_t>(t.task_idx)];
      Rng pick = derive_rng(t.seed, "eval/prompt_pick");
      const data::EpisodeHandle* prompt_ep = eps[pick.uniform_int(static_cast<uint32_t>(eps.size()))];
      int start = std::min(ro.prompt_start, prompt_ep->length() - 1);
      PromptStream stream(prompt_ep, start, ro.prompt_stride);
      t.outcome = run_episode(pol, frozen, sim::find_task(tasks[static_cast<size_t>(t.task_idx)]),
                              stream, t.seed, ro);
    }
  };
  int n_workers = std::max(1, opts.workers);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }

  EvalReport report;
  report.prompt_domain = opts.prompt_domain;
  for (size_t ti = 0; ti < tasks.size(); ++ti) {
    TaskResult r;
    r.task = tasks[ti];
    double steps = 0;
    for (const auto& t : trials) {
      if (t.task_idx != static_cast<int>(ti)) continue;
      r.n_trials++;
      r.subgoal_hits += t.outcome.subgoal_ok;
      r.long_hits += t.outcome.long_ok;
      steps += t.outcome.steps;
      r.seeds.push_back(t.seed);
    }
    r.mean_steps = r.n_trials ? steps / r.n_trials : 0;
    report.per_task.push_back(std::move(r));
  }
  return report;
}

// Same trials with matched seeds, differing only in the prompt domain.
struct PairedReport {
  EvalReport robot;
  EvalReport hand;

  double gap() const { return robot.all_long() - hand.all_long(); }

  nlohmann::ordered_json to_json() const {
    return {{"robot_prompts", robot.to_json()},
            {"hand_prompts", hand.to_json()},
            {"long_horizon_gap", gap()}};
  }
};

inline PairedReport prompt_domain_comparison(const policy::Policy& pol,
                                             planner::FrozenPlanner* frozen,
                                             const std::vector<std::string>& tasks,
                                             const data::Dataset& prompts, EvalOpts opts) {
  PairedReport out;
  opts.prompt_domain = "robot";
  out.robot = evaluate(pol, frozen, tasks, prompts, opts);
  opts.prompt_domain = "hand";
  out.hand = evaluate(pol, frozen, tasks, prompts, opts);
  return out;
}

// ---------------------------------------------------------------------------
// Domain overlap: symmetric moment KL over encoder features of frame batches.
// Lower = more overlap.
// ---------------------------------------------------------------------------

struct FrameBatch {
  Tensor left, right;  // [N,3,H,W]
};

inline FrameBatch sample_frames(const data::Dataset& ds, int count, Rng& rng) {
  require(!ds.empty(), Err::EmptyDataset, "cannot sample frames from an empty dataset");
  int hw = ds.episode(0).image_size();
  FrameBatch b;
  b.left = Tensor({count, 3, hw, hw});
  b.right = Tensor({count, 3, hw, hw});
  for (int i = 0; i < count; ++i) {
    const auto& ep = ds.episode(rng.uniform_int(static_cast<uint32_t>(ds.size())));
    int t = static_cast<int>(rng.uniform_int(static_cast<uint32_t>(ep.length())));
    Tensor l = ep.read_frame(sim::View::kLeft, t);
    Tensor r = ep.read_frame(sim::View::kRight, t);
    std::copy(l.data(), l.data() + l.numel(), b.left.data() + static_cast<int64_t>(i) * l.numel());
    std::copy(r.data(), r.data() + r.numel(), b.right.data() + static_cast<int64_t>(i) * r.numel());
  }
  return b;
}

inline double domain_overlap_metric(const planner::LatentPlanner& model, const FrameBatch& hand,
                                    const FrameBatch& robot, double var_floor = 1e-6) {
  require(hand.left.dim(0) >= 2 && robot.left.dim(0) >= 2, Err::InsufficientBatch,
          "need >= 2 frames per domain");
  Tensor fh = model.encode_views(hand.left, hand.right);
  Tensor fr = model.encode_views(robot.left, robot.right);
  return symmetric_moment_kl(fr, fh, var_floor);
}

}  // namespace playmimic::harness
