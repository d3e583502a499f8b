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

#include <fstream>
#include <string>

#include <json.hpp>

#include "playmimic/error.hpp"
#include "playmimic/eval_harness.hpp"
#include "playmimic/latent_planner.hpp"
#include "playmimic/plan_guided_policy.hpp"

namespace playmimic::config {

using json = nlohmann::ordered_json;

// Desk-scale profile: experiments finish in minutes on a CPU. The paper
// profile swaps in the published hyperparameter table values.
inline json desk_defaults() {
  return json{
      {"profile", "desk"},
      {"sim",
       {{"image_size", 64},
        {"rate_hz", 20},
        {"robot_speed", 0.025},
        {"hand_speed_mult", 4.0},
        {"play_episode_steps", 1200},
        {"detector_dropout", 0.03},
        {"tasks", {"desk/task1", "desk/task2", "desk/task3", "desk/task4", "desk/easy",
                   "desk/medium", "desk/hard"}}}},
      {"data",
       {{"root", "data"},
        {"h_min", 20},
        {"h_max", 60},
        {"mix_ratio", 1.0},
        {"traj_horizon", 10},
        {"kl_reference_frames", 8}}},
      {"planner",
       {{"image_feature_dim", 64},
        {"plan_dim", 128},
        {"mlp_dims", {400, 400}},
        {"gmm_modes", 5},
        {"gmm_min_std", 1e-4},
        {"gmm_std_activation", "softplus"},
        {"kl_weight", 250.0},
        {"var_floor", 1e-6},
        {"encoder_channels", {12, 24, 32, 32}},
        {"lr", 5e-4},
        {"lr_decay", "none"},
        {"batch_size", 16},
        {"epochs", 200},
        {"steps_per_epoch", 10}}},
      {"policy",
       {{"image_feature_dim", 64},
        {"proprio_feature_dim", 64},
        {"gmm_modes", 5},
        {"gmm_min_std", 0.01},
        {"gmm_std_activation", "softplus"},
        {"gpt_embed", 256},
        {"gpt_layers", 4},
        {"gpt_heads", 4},
        {"gpt_block", 10},
        {"gpt_mlp_mult", 2},
        {"gpt_dropout", 0.1},
        {"head_dims", {128}},
        {"encoder_channels", {8, 16, 32}},
        {"lr", 5e-4},
        {"lr_decay_factor", 0.1},
        {"lr_decay_epochs", {100, 130}},
        {"batch_size", 16},
        {"epochs", 150},
        {"steps_per_epoch", 10},
        {"train_seq_length", 10}}},
      {"eval",
       {{"trials", 50},
        {"seeds", {0, 1, 2}},
        {"prompt_domain", "robot"},
        {"prompt_start", 20},
        {"prompt_stride", 1},
        {"max_steps", 360},
        {"workers", 2}}},
      {"run", {{"seed", 0}, {"out", "out"}, {"threads", 2}, {"device", "cpu"}}},
  };
}

// Verbatim published hyperparameters where the tables give them.
inline json paper_overrides() {
  return json{
      {"profile", "paper"},
      {"data", {{"h_min", 200}, {"h_max", 600}}},
      {"planner",
       {{"kl_weight", 1000.0},
        {"encoder_channels", {32, 64, 128, 256, 512}},
        {"lr", 1e-4},
        {"batch_size", 16},
        {"epochs", 1000},
        {"steps_per_epoch", 100}}},
      {"policy",
       {{"gpt_embed", 656},
        {"head_dims", {656, 128}},
        {"encoder_channels", {32, 64, 128, 256, 512}},
        {"lr", 1e-4},
        {"lr_decay_epochs", {300, 600}},
        {"epochs", 1000},
        {"steps_per_epoch", 100}}},
  };
}

namespace detail {

inline void deep_merge(json& base, const json& over, const std::string& path) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    std::string key_path = path.empty() ? it.key() : path + "." + it.key();
    require(base.contains(it.key()), Err::BadConfig, "unknown config key: " + key_path);
    if (it->is_object() && base[it.key()].is_object()) {
      deep_merge(base[it.key()], *it, key_path);
    } else {
      require(!base[it.key()].is_object(), Err::BadConfig,
              "config key expects a section: " + key_path);
      base[it.key()] = *it;
    }
  }
}

}  // namespace detail

class Config {
 public:
  static Config desk() {
    Config c;
    c.doc_ = desk_defaults();
    return c;
  }

  static Config paper() {
    Config c;
    c.doc_ = desk_defaults();
    detail::deep_merge(c.doc_, paper_overrides(), "");
    return c;
  }

  static Config from_file(const std::string& path, bool paper_scale = false) {
    Config c = paper_scale ? paper() : desk();
    if (!path.empty()) {
      std::ifstream f(path);
      require(f.good(), Err::IOFailure, "cannot open config " + path);
      json user = json::parse(f, nullptr, false);
      require(!user.is_discarded(), Err::BadConfig, "invalid config json: " + path);
      detail::deep_merge(c.doc_, user, "");
    }
    return c;
  }

  // "--set dotted.key=value"; values parse as JSON literals, else strings.
  void set_override(const std::string& kv) {
    auto eq = kv.find('=');
    require(eq != std::string::npos && eq > 0, Err::BadConfig, "override must be key=value: " + kv);
    std::string key = kv.substr(0, eq);
    std::string raw = kv.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json* node = &doc_;
    size_t pos = 0;
    for (;;) {
      auto dot = key.find('.', pos);
      std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
      require(node->contains(part), Err::BadConfig, "unknown config key: " + key);
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      pos = dot + 1;
    }
    require(!node->is_object(), Err::BadConfig, "cannot assign to a config section: " + key);
    *node = value;
  }

  const json& root() const { return doc_; }
  json& mutable_root() { return doc_; }

  template <typename T>
  T get(const std::string& section, const std::string& key) const {
    return doc_.at(section).at(key).get<T>();
  }

  planner::PlannerConfig planner_config() const {
    planner::PlannerConfig c = planner::PlannerConfig::from_json(doc_.at("planner"));
    c.image_size = get<int>("sim", "image_size");
    c.traj_horizon = get<int>("data", "traj_horizon");
    c.h_min = get<int>("data", "h_min");
    c.h_max = get<int>("data", "h_max");
    c.mix_ratio = get<double>("data", "mix_ratio");
    c.kl_reference_frames = get<int>("data", "kl_reference_frames");
    return c;
  }

  policy::PolicyConfig policy_config(policy::Variant variant) const {
    policy::PolicyConfig c = policy::PolicyConfig::from_json(doc_.at("policy"));
    c.variant = variant;
    c.image_size = get<int>("sim", "image_size");
    c.plan_dim = get<int>("planner", "plan_dim");
    c.h_min = get<int>("data", "h_min");
    c.h_max = get<int>("data", "h_max");
    c.window = get<int>("policy", "train_seq_length");
    return c;
  }

  harness::EvalOpts eval_opts() const {
    harness::EvalOpts o;
    o.n_trials = get<int>("eval", "trials");
    o.max_steps = get<int>("eval", "max_steps");
    o.prompt_start = get<int>("eval", "prompt_start");
    o.prompt_stride = get<int>("eval", "prompt_stride");
    o.workers = get<int>("eval", "workers");
    o.prompt_domain = get<std::string>("eval", "prompt_domain");
    return o;
  }

 private:
  json doc_;
};

}  // namespace playmimic::config
