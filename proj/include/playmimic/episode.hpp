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

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "playmimic/error.hpp"
#include "playmimic/workbench_sim.hpp"

namespace playmimic::data {

namespace fs = std::filesystem;

inline float gripper_cmd_to_float(sim::GripperCmd c) {
  switch (c) {
    case sim::GripperCmd::kOpen: return 0.0f;
    case sim::GripperCmd::kClose: return 1.0f;
    case sim::GripperCmd::kNoop: return 2.0f;
  }
  return 2.0f;
}

inline sim::GripperCmd gripper_cmd_from_float(float f) {
  if (f < 0.5f) return sim::GripperCmd::kOpen;
  if (f < 1.5f) return sim::GripperCmd::kClose;
  return sim::GripperCmd::kNoop;
}

// Time-indexed record of one play or demonstration episode. Hand episodes
// carry no actions and no wrist stream.
struct Episode {
  sim::Domain domain = sim::Domain::kRobot;
  std::vector<sim::Frame> frames;
  std::vector<Vec3> effector_xyz;
  std::vector<sim::Action> actions;       // robot only
  std::vector<int8_t> gripper_state;      // 0 open, 1 closed
  std::optional<std::string> task_name;

  int length() const { return static_cast<int>(frames.size()); }

  void validate() const {
    size_t n = frames.size();
    require(effector_xyz.size() == n && gripper_state.size() == n, Err::ShapeMismatch,
            "per-step streams differ in length");
    if (domain == sim::Domain::kHand) {
      require(actions.empty(), Err::ShapeMismatch, "hand episodes carry no actions");
    } else {
      require(actions.size() == n, Err::ShapeMismatch, "robot episode needs per-step actions");
    }
    for (const auto& p : effector_xyz)
      require(p.finite(), Err::ShapeMismatch, "non-finite effector position");
  }
};

// ---------------------------------------------------------------------------
// On-disk layout: <dir>/manifest.json plus one little-endian raw tensor file
// per stream. Images are float32 CHW per frame in [0,1].
// ---------------------------------------------------------------------------

namespace detail {

inline void write_bin(const fs::path& p, const void* data, size_t bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  require(f.good(), Err::IOFailure, "cannot open " + p.string());
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  require(f.good(), Err::IOFailure, "write failed: " + p.string());
}

inline void read_bin(const fs::path& p, void* data, size_t bytes) {
  std::ifstream f(p, std::ios::binary);
  require(f.good(), Err::IOFailure, "cannot open " + p.string());
  f.seekg(0, std::ios::end);
  require(static_cast<size_t>(f.tellg()) == bytes, Err::ShapeMismatch,
          "stream size mismatch: " + p.string());
  f.seekg(0);
  f.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  require(f.good(), Err::IOFailure, "read failed: " + p.string());
}

}  // namespace detail

inline void write_episode(const Episode& ep, const std::string& dir) {
  ep.validate();
  fs::create_directories(dir);
  int n = ep.length();
  bool robot = ep.domain == sim::Domain::kRobot;
  int hw = n > 0 ? ep.frames[0].left.dim(1) : sim::kImageSize;

  nlohmann::ordered_json manifest;
  manifest["version"] = "episode.v1";
  manifest["domain"] = sim::domain_name(ep.domain);
  manifest["length"] = n;
  manifest["task"] = ep.task_name ? nlohmann::ordered_json(*ep.task_name) : nlohmann::ordered_json();
  nlohmann::ordered_json streams;
  auto img_shape = nlohmann::ordered_json::array({n, 3, hw, hw});
  streams["frames_left"] = {{"dtype", "f32"}, {"shape", img_shape}};
  streams["frames_right"] = {{"dtype", "f32"}, {"shape", img_shape}};
  if (robot) streams["frames_wrist"] = {{"dtype", "f32"}, {"shape", img_shape}};
  streams["effector_xyz"] = {{"dtype", "f32"}, {"shape", {n, 3}}};
  if (robot) streams["actions"] = {{"dtype", "f32"}, {"shape", {n, 4}}};
  streams["gripper"] = {{"dtype", "i8"}, {"shape", {n}}};
  manifest["streams"] = streams;

  {
    std::ofstream f(fs::path(dir) / "manifest.json");
    require(f.good(), Err::IOFailure, "cannot open manifest in " + dir);
    f << manifest.dump(2) << "\n";
  }

  size_t frame_floats = 3 * static_cast<size_t>(hw) * hw;
  auto write_view = [&](const char* name, auto getter) {
    std::vector<float> buf(static_cast<size_t>(n) * frame_floats);
    for (int i = 0; i < n; ++i) {
      const Tensor& img = getter(ep.frames[static_cast<size_t>(i)]);
      require(static_cast<size_t>(img.numel()) == frame_floats, Err::ShapeMismatch,
              "frame size mismatch");
      std::copy(img.data(), img.data() + img.numel(), buf.begin() + static_cast<long>(i * frame_floats));
    }
    detail::write_bin(fs::path(dir) / name, buf.data(), buf.size() * sizeof(float));
  };
  write_view("frames_left.bin", [](const sim::Frame& f) -> const Tensor& { return f.left; });
  write_view("frames_right.bin", [](const sim::Frame& f) -> const Tensor& { return f.right; });
  if (robot)
    write_view("frames_wrist.bin", [](const sim::Frame& f) -> const Tensor& { return f.wrist; });

  {
    std::vector<float> xyz(static_cast<size_t>(n) * 3);
    for (int i = 0; i < n; ++i) {
      xyz[static_cast<size_t>(i) * 3 + 0] = static_cast<float>(ep.effector_xyz[static_cast<size_t>(i)].x);
      xyz[static_cast<size_t>(i) * 3 + 1] = static_cast<float>(ep.effector_xyz[static_cast<size_t>(i)].y);
      xyz[static_cast<size_t>(i) * 3 + 2] = static_cast<float>(ep.effector_xyz[static_cast<size_t>(i)].z);
    }
    detail::write_bin(fs::path(dir) / "effector_xyz.bin", xyz.data(), xyz.size() * sizeof(float));
  }
  if (robot) {
    std::vector<float> act(static_cast<size_t>(n) * 4);
    for (int i = 0; i < n; ++i) {
      const sim::Action& a = ep.actions[static_cast<size_t>(i)];
      act[static_cast<size_t>(i) * 4 + 0] = static_cast<float>(a.delta.x);
      act[static_cast<size_t>(i) * 4 + 1] = static_cast<float>(a.delta.y);
      act[static_cast<size_t>(i) * 4 + 2] = static_cast<float>(a.delta.z);
      act[static_cast<size_t>(i) * 4 + 3] = gripper_cmd_to_float(a.gripper);
    }
    detail::write_bin(fs::path(dir) / "actions.bin", act.data(), act.size() * sizeof(float));
  }
  detail::write_bin(fs::path(dir) / "gripper.bin", ep.gripper_state.data(),
                    ep.gripper_state.size());
}

inline nlohmann::json read_manifest(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "manifest.json");
  require(f.good(), Err::IOFailure, "cannot open manifest in " + dir);
  nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
  require(!j.is_discarded(), Err::CorruptManifest, "invalid manifest json in " + dir);
  require(j.value("version", "") == "episode.v1", Err::CorruptManifest,
          "unsupported episode version in " + dir);
  require(j.contains("length") && j.contains("streams") && j.contains("domain"),
          Err::CorruptManifest, "manifest missing fields in " + dir);
  return j;
}

inline Episode read_episode(const std::string& dir) {
  nlohmann::json m = read_manifest(dir);
  Episode ep;
  ep.domain = sim::domain_from_name(m["domain"]);
  int n = m["length"];
  if (!m["task"].is_null()) ep.task_name = m["task"].get<std::string>();
  bool robot = ep.domain == sim::Domain::kRobot;

  auto stream_shape = [&](const char* name) {
    require(m["streams"].contains(name), Err::CorruptManifest,
            std::string("manifest missing stream ") + name);
    auto sh = m["streams"][name]["shape"].get<std::vector<int>>();
    require(!sh.empty() && sh[0] == n, Err::CorruptManifest,
            std::string("stream length disagrees with manifest length: ") + name);
    return sh;
  };

  auto img_shape = stream_shape("frames_left");
  require(img_shape.size() == 4, Err::CorruptManifest, "image stream must be rank 4");
  int hw = img_shape[2];
  size_t frame_floats = 3 * static_cast<size_t>(hw) * hw;

  auto read_view = [&](const char* file) {
    std::vector<float> buf(static_cast<size_t>(n) * frame_floats);
    detail::read_bin(fs::path(dir) / file, buf.data(), buf.size() * sizeof(float));
    return buf;
  };
  auto bl = read_view("frames_left.bin");
  auto br = read_view("frames_right.bin");
  std::vector<float> bw;
  if (robot) {
    stream_shape("frames_wrist");
    bw = read_view("frames_wrist.bin");
  }
  ep.frames.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    sim::Frame& f = ep.frames[static_cast<size_t>(i)];
    f.domain = ep.domain;
    f.left = Tensor({3, hw, hw},
                    std::vector<float>(bl.begin() + static_cast<long>(i * frame_floats),
                                       bl.begin() + static_cast<long>((i + 1) * frame_floats)));
    f.right = Tensor({3, hw, hw},
                     std::vector<float>(br.begin() + static_cast<long>(i * frame_floats),
                                        br.begin() + static_cast<long>((i + 1) * frame_floats)));
    if (robot)
      f.wrist = Tensor({3, hw, hw},
                       std::vector<float>(bw.begin() + static_cast<long>(i * frame_floats),
                                          bw.begin() + static_cast<long>((i + 1) * frame_floats)));
  }

  stream_shape("effector_xyz");
  std::vector<float> xyz(static_cast<size_t>(n) * 3);
  detail::read_bin(fs::path(dir) / "effector_xyz.bin", xyz.data(), xyz.size() * sizeof(float));
  ep.effector_xyz.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    ep.effector_xyz[static_cast<size_t>(i)] = {xyz[static_cast<size_t>(i) * 3],
                                               xyz[static_cast<size_t>(i) * 3 + 1],
                                               xyz[static_cast<size_t>(i) * 3 + 2]};
  if (robot) {
    stream_shape("actions");
    std::vector<float> act(static_cast<size_t>(n) * 4);
    detail::read_bin(fs::path(dir) / "actions.bin", act.data(), act.size() * sizeof(float));
    ep.actions.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      ep.actions[static_cast<size_t>(i)].delta = {act[static_cast<size_t>(i) * 4],
                                                  act[static_cast<size_t>(i) * 4 + 1],
                                                  act[static_cast<size_t>(i) * 4 + 2]};
      ep.actions[static_cast<size_t>(i)].gripper = gripper_cmd_from_float(act[static_cast<size_t>(i) * 4 + 3]);
    }
  }
  stream_shape("gripper");
  ep.gripper_state.resize(static_cast<size_t>(n));
  detail::read_bin(fs::path(dir) / "gripper.bin", ep.gripper_state.data(),
                   ep.gripper_state.size());
  ep.validate();
  return ep;
}

// ---------------------------------------------------------------------------
// Lazy random-access reader. pread-based: safe for concurrent readers.
// ---------------------------------------------------------------------------

class EpisodeHandle {
 public:
  EpisodeHandle() = default;

  explicit EpisodeHandle(const std::string& dir) : dir_(dir) {
    nlohmann::json m = read_manifest(dir);
    domain_ = sim::domain_from_name(m["domain"]);
    length_ = m["length"];
    if (!m["task"].is_null()) task_ = m["task"].get<std::string>();
    auto sh = m["streams"]["frames_left"]["shape"].get<std::vector<int>>();
    image_size_ = sh[2];
    // Validate stream sizes eagerly so corruption surfaces at load time.
    auto expect = [&](const char* file, size_t bytes) {
      std::error_code ec;
      auto sz = fs::file_size(fs::path(dir) / file, ec);
      require(!ec, Err::IOFailure, std::string("missing stream ") + file + " in " + dir);
      require(sz == bytes, Err::ShapeMismatch, std::string("stream size mismatch: ") + file);
    };
    size_t ff = frame_bytes();
    expect("frames_left.bin", static_cast<size_t>(length_) * ff);
    expect("frames_right.bin", static_cast<size_t>(length_) * ff);
    if (robot()) expect("frames_wrist.bin", static_cast<size_t>(length_) * ff);
    expect("effector_xyz.bin", static_cast<size_t>(length_) * 3 * sizeof(float));
    if (robot()) expect("actions.bin", static_cast<size_t>(length_) * 4 * sizeof(float));
    expect("gripper.bin", static_cast<size_t>(length_));
    // Small streams are cached up front.
    xyz_.resize(static_cast<size_t>(length_) * 3);
    detail::read_bin(fs::path(dir) / "effector_xyz.bin", xyz_.data(), xyz_.size() * sizeof(float));
    if (robot()) {
      act_.resize(static_cast<size_t>(length_) * 4);
      detail::read_bin(fs::path(dir) / "actions.bin", act_.data(), act_.size() * sizeof(float));
    }
    grip_.resize(static_cast<size_t>(length_));
    detail::read_bin(fs::path(dir) / "gripper.bin", grip_.data(), grip_.size());
  }

  const std::string& dir() const { return dir_; }
  sim::Domain domain() const { return domain_; }
  bool robot() const { return domain_ == sim::Domain::kRobot; }
  int length() const { return length_; }
  int image_size() const { return image_size_; }
  const std::optional<std::string>& task() const { return task_; }

  Tensor read_frame(sim::View view, int t) const {
    require(t >= 0 && t < length_, Err::ShapeMismatch, "frame index out of range");
    const char* file = view == sim::View::kLeft    ? "frames_left.bin"
                       : view == sim::View::kRight ? "frames_right.bin"
                                                   : "frames_wrist.bin";
    require(view != sim::View::kWrist || robot(), Err::InvalidView, "no wrist stream");
    Tensor img({3, image_size_, image_size_});
    pread_stream(file, img.data(), frame_bytes(), static_cast<off_t>(t) * static_cast<off_t>(frame_bytes()));
    return img;
  }

  Vec3 effector(int t) const {
    return {xyz_[static_cast<size_t>(t) * 3], xyz_[static_cast<size_t>(t) * 3 + 1],
            xyz_[static_cast<size_t>(t) * 3 + 2]};
  }

  // Normalized action target: delta / max_speed plus gripper state in {0,1}.
  // The gripper target is the post-step state, the cleaner learning signal
  // for a thresholded command head.
  std::array<float, 4> action_target(int t, double max_speed) const {
    std::array<float, 4> a{};
    a[0] = static_cast<float>(act_[static_cast<size_t>(t) * 4] / max_speed);
    a[1] = static_cast<float>(act_[static_cast<size_t>(t) * 4 + 1] / max_speed);
    a[2] = static_cast<float>(act_[static_cast<size_t>(t) * 4 + 2] / max_speed);
    a[3] = static_cast<float>(grip_[static_cast<size_t>(t)]);
    return a;
  }

  float gripper01(int t) const { return static_cast<float>(grip_[static_cast<size_t>(t)]); }

 private:
  size_t frame_bytes() const { return 3 * static_cast<size_t>(image_size_) * image_size_ * sizeof(float); }

  void pread_stream(const char* file, void* dst, size_t bytes, off_t offset) const {
    fs::path p = fs::path(dir_) / file;
    int fd = ::open(p.c_str(), O_RDONLY);
    require(fd >= 0, Err::IOFailure, "cannot open " + p.string());
    ssize_t got = ::pread(fd, dst, bytes, offset);
    ::close(fd);
    require(got == static_cast<ssize_t>(bytes), Err::IOFailure, "short read: " + p.string());
  }

  std::string dir_;
  sim::Domain domain_ = sim::Domain::kRobot;
  int length_ = 0;
  int image_size_ = sim::kImageSize;
  std::optional<std::string> task_;
  std::vector<float> xyz_;
  std::vector<float> act_;
  std::vector<int8_t> grip_;
};

// A directory of episodes: <root>/<domain>/<episode_id>/.
class Dataset {
 public:
  Dataset() = default;

  static Dataset open(const std::string& root) {
    Dataset ds;
    ds.root_ = root;
    require(fs::exists(root), Err::IOFailure, "dataset root missing: " + root);
    std::vector<std::string> dirs;
    for (const char* dom : {"hand", "robot"}) {
      fs::path droot = fs::path(root) / dom;
      if (!fs::exists(droot)) continue;
      for (const auto& e : fs::directory_iterator(droot))
        if (e.is_directory() && fs::exists(e.path() / "manifest.json"))
          dirs.push_back(e.path().string());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) ds.episodes_.push_back(EpisodeHandle(d));
    return ds;
  }

  const std::string& root() const { return root_; }
  bool empty() const { return episodes_.empty(); }
  size_t size() const { return episodes_.size(); }
  const EpisodeHandle& episode(size_t i) const { return episodes_.at(i); }
  const std::vector<EpisodeHandle>& episodes() const { return episodes_; }

  std::vector<int> episodes_for_task(const std::string& task) const {
    std::vector<int> out;
    for (size_t i = 0; i < episodes_.size(); ++i)
      if (episodes_[i].task() && *episodes_[i].task() == task) out.push_back(static_cast<int>(i));
    return out;
  }

  // Provenance hash over manifests and stream bytes.
  uint64_t content_hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& ep : episodes_) {
      h = fnv1a(ep.dir(), h);
      for (const auto& f : fs::directory_iterator(ep.dir())) {
        h = fnv1a(f.path().filename().string(), h);
        h ^= file_content_hash(f.path().string());
        h *= 1099511628211ull;
      }
    }
    return h;
  }

 private:
  std::string root_;
  std::vector<EpisodeHandle> episodes_;
};

inline std::string episode_dir(const std::string& root, sim::Domain d, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "ep%05d", index);
  return (fs::path(root) / sim::domain_name(d) / buf).string();
}

}  // namespace playmimic::data
