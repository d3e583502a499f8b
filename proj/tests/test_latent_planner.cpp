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

#include <filesystem>

#include "gradcheck.hpp"
#include "playmimic/latent_planner.hpp"
#include "playmimic/scripted.hpp"

using namespace playmimic;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path root;
  data::Dataset play;
  data::Dataset demos;

  Fixture() {
    root = fs::temp_directory_path() / "playmimic_planner_test";
    if (!fs::exists(root / "done")) {
      fs::remove_all(root);
      for (int i = 0; i < 2; ++i)
        data::write_episode(sim::scripted_play(static_cast<uint64_t>(i), 160),
                            data::episode_dir((root / "play").string(), sim::Domain::kHand, i));
      int idx = 0;
      for (const char* task : {"desk/task2", "desk/task4"})
        for (int i = 0; i < 2; ++i)
          data::write_episode(sim::scripted_demo(task, static_cast<uint64_t>(20 + idx)),
                              data::episode_dir((root / "demos").string(), sim::Domain::kRobot,
                                                idx++));
      std::ofstream(root / "done") << "ok";
    }
    play = data::Dataset::open((root / "play").string());
    demos = data::Dataset::open((root / "demos").string());
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

planner::PlannerConfig tiny_config() {
  planner::PlannerConfig cfg;
  cfg.encoder_channels = {6, 12, 16};
  cfg.image_feature_dim = 16;
  cfg.plan_dim = 16;
  cfg.mlp_dims = {64};
  cfg.batch_size = 4;
  cfg.h_min = 5;
  cfg.h_max = 15;
  cfg.kl_weight = 10.0;
  return cfg;
}

Tensor random_images(int n, Rng& rng) {
  Tensor t({n, 3, 64, 64});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform());
  return t;
}

}  // namespace

TEST_CASE("encode_views is deterministic and finite on degenerate input") {
  planner::LatentPlanner model(tiny_config(), 3);
  Rng rng(1);
  Tensor l = random_images(2, rng), r = random_images(2, rng);
  Tensor a = model.encode_views(l, r);
  Tensor b = model.encode_views(l, r);
  CHECK(a.vec() == b.vec());
  Tensor zeros({2, 3, 64, 64});
  Tensor f = model.encode_views(zeros, zeros);
  CHECK(f.all_finite());
  CHECK(f.dim(1) == 32);  // two 16-d view features
}

TEST_CASE("encode_views rejects bad image shapes") {
  planner::LatentPlanner model(tiny_config(), 3);
  Tensor bad({2, 3, 32, 32});
  CHECK_THROWS_WITH_AS(model.encode_views(bad, bad), doctest::Contains("BadImageShape"),
                       Exception);
}

TEST_CASE("plan is defined for goal == observation and is order-equivariant") {
  planner::LatentPlanner model(tiny_config(), 4);
  Rng rng(2);
  Tensor l = random_images(3, rng), r = random_images(3, rng);
  Tensor feat = model.encode_views(l, r);
  Tensor p_same = model.plan(feat, feat);
  CHECK(p_same.all_finite());
  CHECK(p_same.dim(1) == 16);

  // permute batch rows -> permuted plans
  Tensor goal = model.encode_views(random_images(3, rng), random_images(3, rng));
  Tensor plans = model.plan(feat, goal);
  std::vector<int> perm{2, 0, 1};
  Tensor feat_p({3, feat.dim(1)}), goal_p({3, goal.dim(1)});
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < feat.dim(1); ++j) feat_p.at2(i, j) = feat.at2(perm[static_cast<size_t>(i)], j);
    for (int j = 0; j < goal.dim(1); ++j) goal_p.at2(i, j) = goal.at2(perm[static_cast<size_t>(i)], j);
  }
  Tensor plans_p = model.plan(feat_p, goal_p);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 16; ++j)
      CHECK(plans_p.at2(i, j) == plans.at2(perm[static_cast<size_t>(i)], j));
}

TEST_CASE("plans differ for goals drawn from different scenes") {
  planner::LatentPlanner model(tiny_config(), 5);
  auto& f = fixture();
  const auto& ep = f.demos.episode(0);
  Tensor obs_l = ep.read_frame(sim::View::kLeft, 0).reshaped({1, 3, 64, 64});
  Tensor obs_r = ep.read_frame(sim::View::kRight, 0).reshaped({1, 3, 64, 64});
  Tensor obs = model.encode_views(obs_l, obs_r);
  const auto& ep2 = f.demos.episode(2);
  Tensor g1 = model.encode_views(ep.read_frame(sim::View::kLeft, ep.length() - 1).reshaped({1, 3, 64, 64}),
                                 ep.read_frame(sim::View::kRight, ep.length() - 1).reshaped({1, 3, 64, 64}));
  Tensor g2 = model.encode_views(ep2.read_frame(sim::View::kLeft, ep2.length() - 1).reshaped({1, 3, 64, 64}),
                                 ep2.read_frame(sim::View::kRight, ep2.length() - 1).reshaped({1, 3, 64, 64}));
  Tensor p1 = model.plan(obs, g1);
  Tensor p2 = model.plan(obs, g2);
  double dist = 0;
  for (int j = 0; j < 16; ++j) dist += (p1[j] - p2[j]) * (p1[j] - p2[j]);
  CHECK(dist > 0.0);
}

TEST_CASE("decoded trajectory distributions satisfy the mixture constraints") {
  planner::PlannerConfig cfg = tiny_config();
  cfg.gmm_min_std = 1e-4f;
  planner::LatentPlanner model(cfg, 6);
  Rng rng(3);
  Tensor feat = model.encode_views(random_images(1, rng), random_images(1, rng));
  Tensor plan = model.plan(feat, feat);
  GmmParams p = model.decode_trajectory_dist(plan.reshaped({16}), {0.1, 0.0, 0.05});
  CHECK(p.valid());
  float sum = 0;
  for (int k = 0; k < p.modes(); ++k) sum += p.weights[k];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  for (int64_t i = 0; i < p.stds.numel(); ++i) CHECK(p.stds[i] >= 1e-4f);
  CHECK(p.dim() == 30);
}

TEST_CASE("planner loss: lambda 0 equals the pure nll and single-domain kl is zero") {
  auto& f = fixture();
  planner::LatentPlanner model(tiny_config(), 7);
  data::PlannerBatchOpts bo;
  bo.batch_size = 6;
  bo.mix_ratio = 0.0;
  bo.h_min = 5;
  bo.h_max = 15;
  bo.kl_reference_frames = 0;  // single-domain batch, nothing attached
  Rng rng(4);
  auto batch = data::make_planner_batch(&f.play, &f.demos, bo, rng);
  Graph g(false);
  auto parts0 = model.loss_g(g, batch, 0.0);
  Graph g2(false);
  auto parts1 = model.loss_g(g2, batch, 1000.0);
  CHECK_FALSE(parts1.has_kl);  // no second domain anywhere
  CHECK(g2.val(parts1.total)[0] == g.val(parts0.nll)[0]);
  CHECK(g.val(parts0.total)[0] == g.val(parts0.nll)[0]);
}

TEST_CASE("planner loss composes the nll and kl oracles") {
  auto& f = fixture();
  planner::LatentPlanner model(tiny_config(), 8);
  data::PlannerBatchOpts bo;
  bo.batch_size = 8;
  bo.mix_ratio = 0.5;
  bo.h_min = 5;
  bo.h_max = 15;
  Rng rng(55);
  data::PlannerBatch batch;
  for (;;) {  // ensure both domains present with >= 2 each
    batch = data::make_planner_batch(&f.play, &f.demos, bo, rng);
    int h = 0;
    for (auto d : batch.domains) h += d == sim::Domain::kHand;
    if (h >= 2 && h <= 6) break;
  }
  double lambda = 1000.0;
  Graph g(false);
  auto parts = model.loss_g(g, batch, lambda);
  REQUIRE(parts.has_kl);
  double total = g.val(parts.total)[0];

  // oracle composition: runtime nll over decoded mixtures + runtime moment KL
  Tensor feats = model.encode_views(batch.obs_left, batch.obs_right);
  Tensor goals = model.encode_views(batch.goal_left, batch.goal_right);
  Tensor plans = model.plan(feats, goals);
  double nll = 0;
  for (int i = 0; i < batch.size(); ++i) {
    Tensor prow({16});
    for (int j = 0; j < 16; ++j) prow[j] = plans.at2(i, j);
    Vec3 l{batch.l_t.at2(i, 0), batch.l_t.at2(i, 1), batch.l_t.at2(i, 2)};
    GmmParams p = model.decode_trajectory_dist(prow, l);
    Tensor tau({30});
    for (int j = 0; j < 30; ++j) tau[j] = batch.target_traj.at2(i, j);
    nll += gmm_nll(p, tau.data());
  }
  nll /= batch.size();
  std::vector<int> hand_rows, robot_rows;
  for (size_t i = 0; i < batch.domains.size(); ++i)
    (batch.domains[i] == sim::Domain::kHand ? hand_rows : robot_rows).push_back(static_cast<int>(i));
  auto gather = [&](const std::vector<int>& rows) {
    Tensor out({static_cast<int>(rows.size()), feats.dim(1)});
    for (size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < feats.dim(1); ++j) out.at2(static_cast<int>(i), j) = feats.at2(rows[i], j);
    return out;
  };
  double kl = kl_domain_loss(gather(robot_rows), gather(hand_rows), 1e-6);
  CHECK(total == doctest::Approx(nll + lambda * kl).epsilon(2e-4));
}

TEST_CASE("miniature planner gradients match finite differences everywhere") {
  auto& f = fixture();
  planner::PlannerConfig cfg;
  cfg.encoder_channels = {3, 4};
  cfg.image_feature_dim = 6;
  cfg.plan_dim = 6;
  cfg.mlp_dims = {10};
  cfg.gmm_modes = 2;
  cfg.kl_weight = 0.5;
  cfg.batch_size = 2;
  cfg.h_min = 3;
  cfg.h_max = 8;
  planner::LatentPlannerT<double> model(cfg, 11);
  data::PlannerBatchOpts bo;
  bo.batch_size = 2;
  bo.mix_ratio = 0.5;
  bo.h_min = 3;
  bo.h_max = 8;
  bo.kl_reference_frames = 2;
  Rng rng(5);
  data::PlannerBatch batch;
  for (;;) {
    batch = data::make_planner_batch(&f.play, &f.demos, bo, rng);
    int h = 0;
    for (auto d : batch.domains) h += d == sim::Domain::kHand;
    if (h == 1) break;  // one of each plus attached frames: exercises the KL path
  }
  auto build = [&](GraphT<double>& g) {
    auto parts = model.loss_g(g, batch, cfg.kl_weight);
    return parts.total;
  };
  auto res = testing::gradcheck(model.params(), build, 1e-3, 1);
  CAPTURE(res.worst_param);
  CAPTURE(res.checked);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("short training run decreases the smoothed loss") {
  auto& f = fixture();
  planner::PlannerConfig cfg = tiny_config();
  cfg.lr = 1e-3;
  cfg.epochs = 2;
  cfg.steps_per_epoch = 100;
  cfg.mix_ratio = 0.5;
  planner::LatentPlanner model(cfg, 12);
  Rng batch_rng = derive_rng(12, "planner/batches");
  planner::PlannerTrainOpts opts;
  auto stats = planner::train_planner(model, &f.play, f.demos, opts, batch_rng);
  CHECK(stats.steps == 200);
  CHECK(stats.last_window_mean < stats.first_window_mean);
}

TEST_CASE("training aborts on non-finite loss") {
  auto& f = fixture();
  planner::PlannerConfig cfg = tiny_config();
  cfg.lr = 1e-3;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 5;
  planner::LatentPlanner model(cfg, 13);
  // poison one parameter
  model.params().at("plan_mlp.out.b").value[0] = std::numeric_limits<float>::quiet_NaN();
  Rng batch_rng = derive_rng(13, "planner/batches");
  planner::PlannerTrainOpts opts;
  CHECK_THROWS_WITH_AS(planner::train_planner(model, &f.play, f.demos, opts, batch_rng),
                       doctest::Contains("NonFiniteLoss"), Exception);
}

TEST_CASE("checkpoints round trip and resuming matches an uninterrupted run") {
  auto& f = fixture();
  planner::PlannerConfig cfg = tiny_config();
  cfg.lr = 1e-3;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 40;
  auto path = (fs::temp_directory_path() / "pm_planner_ckpt.bin").string();

  // uninterrupted 40 steps
  planner::LatentPlanner full(cfg, 14);
  Rng rng_full = derive_rng(14, "planner/batches");
  planner::PlannerTrainOpts opts;
  planner::train_planner(full, &f.play, f.demos, opts, rng_full);

  // 20 steps, checkpoint, reload, 20 more
  planner::PlannerConfig half_cfg = cfg;
  half_cfg.steps_per_epoch = 20;
  planner::LatentPlanner first(half_cfg, 14);
  Rng rng_half = derive_rng(14, "planner/batches");
  auto stats = planner::train_planner(first, &f.play, f.demos, opts, rng_half);
  planner::save_planner(path, first, stats, 14, rng_half);

  auto loaded = planner::load_planner(path);
  CHECK(loaded.model.checksum() == first.checksum());
  CHECK(loaded.header.version == "planner.v1");
  Rng rng_resume;
  rng_resume.restore(loaded.header.rng);
  planner::PlannerConfig rest_cfg = cfg;  // full horizon: 40 total
  planner::LatentPlanner resumed(rest_cfg, 14);
  // transplant loaded parameters, then continue from step 20
  load_checkpoint(path, resumed.params());
  planner::train_planner(resumed, &f.play, f.demos, opts, rng_resume,
                         static_cast<int>(loaded.header.step));
  CHECK(resumed.checksum() == full.checksum());
}

TEST_CASE("overfitting four samples approaches the min-std floor") {
  // Dedicated tiny dataset: two short demos of the two-subgoal task.
  fs::path root = fs::temp_directory_path() / "pm_overfit";
  if (!fs::exists(root / "demos")) {
    for (int i = 0; i < 2; ++i)
      data::write_episode(sim::scripted_demo("desk/task4", static_cast<uint64_t>(10 + i)),
                          data::episode_dir((root / "demos").string(), sim::Domain::kRobot, i));
  }
  auto demos = data::Dataset::open((root / "demos").string());
  planner::PlannerConfig cfg = tiny_config();
  cfg.kl_weight = 0;
  planner::LatentPlanner model(cfg, 42);
  data::PlannerBatchOpts bo;
  bo.batch_size = 4;
  bo.mix_ratio = 0;
  bo.h_min = 5;
  bo.h_max = 15;
  bo.kl_reference_frames = 0;
  Rng rng(2);
  auto batch = data::make_planner_batch(nullptr, &demos, bo, rng);
  double floor = 15.0 * kLn2Pi + 30.0 * std::log(1e-4);

  // Full-batch Adam with a faster schedule on the std/logit head biases: the
  // softplus tail needs a long walk to bring every std onto the floor.
  int64_t t = 0;
  auto adam_step = [&](double lr, double head_lr) {
    ++t;
    double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t));
    for (auto& [name, e] : model.params().entries()) {
      bool head_bias = name == "traj_decoder.out.b";
      int sig_lo = cfg.gmm_modes + cfg.gmm_modes * 30;
      for (int64_t i = 0; i < e.value.numel(); ++i) {
        double use = head_bias && (i >= sig_lo || i < cfg.gmm_modes) ? head_lr : lr;
        e.m[i] = 0.9f * e.m[i] + 0.1f * e.grad[i];
        e.v[i] = 0.999f * e.v[i] + 0.001f * e.grad[i] * e.grad[i];
        double mh = e.m[i] / bc1, vh = e.v[i] / bc2;
        e.value[i] = static_cast<float>(e.value[i] - use * mh / (std::sqrt(vh) + 1e-8));
      }
    }
  };
  double final_loss = 0;
  for (int step = 0; step < 2000; ++step) {
    double lr = step < 150 ? 1e-2 : 1e-2 * std::pow(0.995, step - 150);
    double head_lr = step < 1850 ? 0.2 : 5e-4;
    model.params().zero_grads();
    Graph g(true);
    auto parts = model.loss_g(g, batch, 0.0);
    g.backward(parts.total);
    adam_step(lr, head_lr);
    final_loss = g.val(parts.total)[0];
  }
  CHECK(final_loss - floor < 1.0);
  CHECK(final_loss >= floor - 1e-6);  // the floor is a true lower bound
}

TEST_CASE("frozen planner caching returns identical plans and leaves parameters alone") {
  auto& f = fixture();
  planner::LatentPlanner model(tiny_config(), 15);
  uint64_t before = model.checksum();
  planner::FrozenPlanner frozen(std::move(model));
  const auto& ep = f.demos.episode(0);
  Tensor p1 = frozen.plan_for(ep, 3, 20);
  Tensor p2 = frozen.plan_for(ep, 3, 20);  // second call hits the cache
  CHECK(p1.vec() == p2.vec());
  CHECK(frozen.checksum() == before);
}
