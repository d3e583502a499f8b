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
#include <optional>
#include <string>
#include <vector>

#include "playmimic/error.hpp"
#include "playmimic/geometry.hpp"
#include "playmimic/rng.hpp"
#include "playmimic/stereo_geometry.hpp"
#include "playmimic/tensor.hpp"

namespace playmimic::sim {

using stereo::Camera;
using stereo::CameraRig;
using stereo::View;

// ---------------------------------------------------------------------------
// Workbench layout. Right-handed, meters, origin at the table center, z up.
// ---------------------------------------------------------------------------

struct Layout {
  Vec3 ws_min{-0.40, -0.30, 0.0};
  Vec3 ws_max{0.40, 0.30, 0.30};

  Vec3 lamp_base{-0.30, 0.20, 0.0};
  Vec3 lamp_button{-0.30, 0.10, 0.015};
  Vec3 box_center{0.26, 0.17, 0.0};
  Vec3 lid_handle{0.26, 0.075, 0.02};
  Vec3 box_slot{0.26, 0.17, 0.02};   // where the pen rests inside the box
  Vec3 rack_slot{-0.28, -0.18, 0.01};
  Vec3 shelf_slot{0.30, -0.20, 0.05};
  Vec3 pen_home{0.0, 0.02, 0.01};
  Vec3 effector_home{0.0, -0.24, 0.12};

  double grasp_radius = 0.02;
  double region_radius = 0.03;

  Vec3 clamp_workspace(const Vec3& p) const {
    return {std::clamp(p.x, ws_min.x, ws_max.x), std::clamp(p.y, ws_min.y, ws_max.y),
            std::clamp(p.z, ws_min.z, ws_max.z)};
  }
};

inline const Layout& default_layout() {
  static const Layout layout;
  return layout;
}

// ---------------------------------------------------------------------------
// Core state
// ---------------------------------------------------------------------------

enum class ObjectId { kPen, kBook };
enum class PenPlace { kTable, kInBox, kHeld };
enum class BookPlace { kRack, kShelf, kHeld };
enum class Domain { kHand, kRobot };

inline const char* domain_name(Domain d) { return d == Domain::kHand ? "hand" : "robot"; }
inline Domain domain_from_name(const std::string& s) {
  if (s == "hand") return Domain::kHand;
  if (s == "robot") return Domain::kRobot;
  fail(Err::CorruptManifest, "unknown domain: " + s);
}

struct SceneState {
  bool lamp_on = false;
  bool lid_open = false;
  PenPlace pen_place = PenPlace::kTable;
  BookPlace book_place = BookPlace::kRack;
  Vec3 pen_pos;
  Vec3 book_pos;
  Vec3 effector;
  bool gripper_closed = false;  // robot embodiment only
  std::optional<ObjectId> held;
  int step_count = 0;
  // Geometric affordance-region membership at the previous step; toggles are
  // edge triggered on entry.
  bool in_lamp_region = false;
  bool in_lid_region = false;

  bool operator==(const SceneState&) const = default;
};

struct Embodiment {
  enum class Kind { kHand, kRobot };
  Kind kind = Kind::kRobot;
  double max_speed = 0.025;  // m per step

  static Embodiment hand() { return {Kind::kHand, 0.10}; }
  static Embodiment robot() { return {Kind::kRobot, 0.025}; }

  bool is_hand() const { return kind == Kind::kHand; }
  Domain domain() const { return is_hand() ? Domain::kHand : Domain::kRobot; }
};

enum class GripperCmd { kOpen, kClose, kNoop };

struct Action {
  Vec3 delta;                               // displacement command, meters
  GripperCmd gripper = GripperCmd::kNoop;

  bool finite() const { return delta.finite(); }
};

struct Frame {
  Tensor left;   // [3,H,W] in [0,1]
  Tensor right;
  Tensor wrist;  // robot domain only; empty otherwise
  Domain domain = Domain::kRobot;
};

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

struct StepResult {
  SceneState state;
  std::vector<std::string> events;
};

namespace detail {

inline Vec3 object_position(const SceneState& s, ObjectId id) {
  return id == ObjectId::kPen ? s.pen_pos : s.book_pos;
}

inline bool pen_reachable(const SceneState& s) {
  if (s.pen_place == PenPlace::kHeld) return false;
  if (s.pen_place == PenPlace::kInBox && !s.lid_open) return false;
  return true;
}

inline bool book_reachable(const SceneState& s) { return s.book_place != BookPlace::kHeld; }

}  // namespace detail

// One kinematic step. Invalid interactions are no-ops recorded in events.
inline StepResult step(const SceneState& state, const Action& action, const Embodiment& emb,
                       const Layout& L = default_layout()) {
  require(action.finite(), Err::ShapeMismatch, "non-finite action");
  StepResult out;
  SceneState& s = out.state;
  s = state;
  s.step_count = state.step_count + 1;

  // Move, clamped to the speed limit and workspace.
  Vec3 d = action.delta;
  double n = d.norm();
  if (n > emb.max_speed) d = d * (emb.max_speed / n);
  s.effector = L.clamp_workspace(s.effector + d);
  if (s.held == ObjectId::kPen) s.pen_pos = s.effector;
  if (s.held == ObjectId::kBook) s.book_pos = s.effector;

  // Gripper commands: grasp on close, release on open.
  bool hand = emb.is_hand();
  if (action.gripper == GripperCmd::kClose) {
    bool closing_edge = hand ? true : !s.gripper_closed;
    if (!hand) s.gripper_closed = true;
    if (closing_edge && !s.held) {
      ObjectId best{};
      double best_d = L.grasp_radius;
      bool found = false;
      if (detail::pen_reachable(s) && distance(s.effector, s.pen_pos) <= best_d) {
        best = ObjectId::kPen;
        best_d = distance(s.effector, s.pen_pos);
        found = true;
      }
      if (detail::book_reachable(s) && distance(s.effector, s.book_pos) <= best_d) {
        best = ObjectId::kBook;
        found = true;
      }
      if (found) {
        s.held = best;
        if (best == ObjectId::kPen) {
          s.pen_place = PenPlace::kHeld;
          s.pen_pos = s.effector;
          out.events.push_back("grasp_pen");
        } else {
          s.book_place = BookPlace::kHeld;
          s.book_pos = s.effector;
          out.events.push_back("grasp_book");
        }
      } else {
        out.events.push_back("grasp_missed");
      }
    }
  } else if (action.gripper == GripperCmd::kOpen) {
    if (!hand) s.gripper_closed = false;
    if (s.held == ObjectId::kPen) {
      if (s.lid_open && distance(s.effector, L.box_slot) <= L.region_radius) {
        s.pen_place = PenPlace::kInBox;
        s.pen_pos = L.box_slot;
        s.held.reset();
        out.events.push_back("place_pen_box");
      } else {
        s.pen_place = PenPlace::kTable;
        s.pen_pos = {s.effector.x, s.effector.y, L.pen_home.z};
        s.held.reset();
        out.events.push_back("place_pen_table");
      }
    } else if (s.held == ObjectId::kBook) {
      if (distance(s.effector, L.shelf_slot) <= L.region_radius) {
        s.book_place = BookPlace::kShelf;
        s.book_pos = L.shelf_slot;
        s.held.reset();
        out.events.push_back("place_book_shelf");
      } else if (distance(s.effector, L.rack_slot) <= L.region_radius) {
        s.book_place = BookPlace::kRack;
        s.book_pos = L.rack_slot;
        s.held.reset();
        out.events.push_back("place_book_rack");
      } else {
        // The book only rests on the rack or the shelf.
        out.events.push_back("release_blocked");
      }
    }
  }

  // Toggles: edge triggered on entering the affordance region with the
  // required contact (hand: bare touch; robot: closed gripper), empty-handed.
  bool contact = !s.held && (hand || s.gripper_closed);
  bool in_lamp = distance(s.effector, L.lamp_button) <= L.region_radius;
  bool in_lid = distance(s.effector, L.lid_handle) <= L.region_radius;
  if (in_lamp && !state.in_lamp_region && contact) {
    s.lamp_on = !s.lamp_on;
    out.events.push_back(s.lamp_on ? "lamp_on" : "lamp_off");
  }
  if (in_lid && !state.in_lid_region && contact) {
    s.lid_open = !s.lid_open;
    out.events.push_back(s.lid_open ? "box_open" : "box_close");
  }
  s.in_lamp_region = in_lamp;
  s.in_lid_region = in_lid;
  return out;
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct Subgoal {
  std::string name;
  std::function<bool(const SceneState&)> pred;
};

struct TaskSpec {
  std::string name;
  std::function<SceneState(Rng&, const Layout&)> initial_sampler;
  std::vector<Subgoal> subgoals;
  bool has_demo_script = true;
};

namespace predicates {
inline bool lamp_on(const SceneState& s) { return s.lamp_on; }
inline bool lamp_off(const SceneState& s) { return !s.lamp_on; }
inline bool box_open(const SceneState& s) { return s.lid_open; }
inline bool holding_pen(const SceneState& s) { return s.pen_place == PenPlace::kHeld; }
inline bool holding_book(const SceneState& s) { return s.book_place == BookPlace::kHeld; }
inline bool pen_in_box(const SceneState& s) { return s.pen_place == PenPlace::kInBox; }
inline bool book_on_shelf(const SceneState& s) { return s.book_place == BookPlace::kShelf; }
}  // namespace predicates

namespace detail {

struct InitOpts {
  bool lamp_on = false;
  int lid = 0;        // 0 closed, 1 open, 2 random
  int pen = 0;        // 0 table center, 1 random: table center or in box
  int book = 0;       // 0 rack, 1 random: rack or shelf
};

inline SceneState sample_initial(Rng& rng, const Layout& L, const InitOpts& o) {
  SceneState s;
  s.lamp_on = o.lamp_on;
  s.lid_open = o.lid == 2 ? rng.uniform() < 0.5 : o.lid == 1;
  bool pen_in_box = o.pen == 1 && rng.uniform() < 0.5;
  if (pen_in_box) {
    s.pen_place = PenPlace::kInBox;
    s.pen_pos = L.box_slot;
  } else {
    s.pen_place = PenPlace::kTable;
    s.pen_pos = {L.pen_home.x + rng.uniform(-0.015, 0.015), L.pen_home.y + rng.uniform(-0.015, 0.015),
                 L.pen_home.z};
  }
  bool book_shelf = o.book == 1 && rng.uniform() < 0.5;
  s.book_place = book_shelf ? BookPlace::kShelf : BookPlace::kRack;
  s.book_pos = book_shelf ? L.shelf_slot : L.rack_slot;
  s.effector = L.effector_home +
               Vec3{rng.uniform(-0.05, 0.05), rng.uniform(-0.04, 0.04), rng.uniform(-0.03, 0.03)};
  s.gripper_closed = false;
  s.step_count = 0;
  s.in_lamp_region = distance(s.effector, L.lamp_button) <= L.region_radius;
  s.in_lid_region = distance(s.effector, L.lid_handle) <= L.region_radius;
  return s;
}

}  // namespace detail

// Study-desk task set. Trained tasks mirror the four desk tasks; easy /
// medium / hard are held-out subgoal compositions (easy: concatenation of two
// trained tasks; medium: one novel subgoal transition; hard: two).
inline const std::vector<TaskSpec>& task_registry() {
  using namespace predicates;
  static const std::vector<TaskSpec> tasks = [] {
    std::vector<TaskSpec> v;
    auto sampler = [](detail::InitOpts o) {
      return [o](Rng& rng, const Layout& L) { return detail::sample_initial(rng, L, o); };
    };
    v.push_back({"desk/task1",
                 sampler({.lamp_on = true, .lid = 2, .pen = 1, .book = 0}),
                 {{"lamp_off", lamp_off}, {"holding_book", holding_book}, {"book_on_shelf", book_on_shelf}}});
    v.push_back({"desk/task2",
                 sampler({.lamp_on = false, .lid = 0, .pen = 0, .book = 1}),
                 {{"lamp_on", lamp_on}, {"box_open", box_open}, {"holding_pen", holding_pen}, {"pen_in_box", pen_in_box}}});
    v.push_back({"desk/task3",
                 sampler({.lamp_on = false, .lid = 0, .pen = 0, .book = 0}),
                 {{"box_open", box_open}, {"holding_pen", holding_pen}, {"pen_in_box", pen_in_box}, {"holding_book", holding_book}, {"book_on_shelf", book_on_shelf}}});
    v.push_back({"desk/task4",
                 sampler({.lamp_on = true, .lid = 0, .pen = 1, .book = 1}),
                 {{"box_open", box_open}, {"lamp_off", lamp_off}}});
    v.push_back({"desk/easy",
                 sampler({.lamp_on = true, .lid = 0, .pen = 1, .book = 0}),
                 {{"box_open", box_open}, {"lamp_off", lamp_off}, {"holding_book", holding_book}, {"book_on_shelf", book_on_shelf}}});
    v.push_back({"desk/medium",
                 sampler({.lamp_on = true, .lid = 0, .pen = 0, .book = 1}),
                 {{"box_open", box_open}, {"lamp_off", lamp_off}, {"holding_pen", holding_pen}, {"pen_in_box", pen_in_box}}});
    v.push_back({"desk/hard",
                 sampler({.lamp_on = true, .lid = 0, .pen = 1, .book = 0}),
                 {{"lamp_off", lamp_off}, {"box_open", box_open}, {"holding_book", holding_book}, {"book_on_shelf", book_on_shelf}}});
    return v;
  }();
  return tasks;
}

inline const TaskSpec& find_task(const std::string& name) {
  for (const auto& t : task_registry())
    if (t.name == name) return t;
  fail(Err::UnknownTask, name);
}

inline std::vector<std::string> trained_task_names() {
  return {"desk/task1", "desk/task2", "desk/task3", "desk/task4"};
}

inline std::vector<std::string> unseen_task_names() {
  return {"desk/easy", "desk/medium", "desk/hard"};
}

inline SceneState reset(const TaskSpec& task, const Embodiment& emb, uint64_t seed,
                        const Layout& L = default_layout()) {
  (void)emb;  // both embodiments share the scene distribution
  Rng rng = derive_rng(seed, "reset/" + task.name);
  return task.initial_sampler(rng, L);
}

inline SceneState reset(const std::string& task_name, const Embodiment& emb, uint64_t seed,
                        const Layout& L = default_layout()) {
  return reset(find_task(task_name), emb, seed, L);
}

// first_subgoal_done: subgoal[0] holds somewhere in the history.
// all_done_in_order: every subgoal first holds strictly later than its
// predecessor first held.
inline std::pair<bool, bool> check_subgoals(const std::vector<SceneState>& history,
                                            const TaskSpec& task) {
  require(!history.empty(), Err::ShapeMismatch, "empty history");
  std::vector<int> first_hold(task.subgoals.size(), -1);
  for (size_t g = 0; g < task.subgoals.size(); ++g) {
    for (size_t i = 0; i < history.size(); ++i) {
      if (task.subgoals[g].pred(history[i])) {
        first_hold[g] = static_cast<int>(i);
        break;
      }
    }
  }
  bool first = first_hold[0] >= 0;
  bool ordered = true;
  for (size_t g = 0; g < first_hold.size(); ++g) {
    if (first_hold[g] < 0 || (g > 0 && first_hold[g] <= first_hold[g - 1])) {
      ordered = false;
      break;
    }
  }
  return {first, ordered};
}

// ---------------------------------------------------------------------------
// Rendering: painter's rasterizer over projected discs and quads, with two
// visual domains sharing geometry.
// ---------------------------------------------------------------------------

struct Rgb {
  float r = 0, g = 0, b = 0;
};

struct Prim {
  enum class Kind { kDisc, kQuad } kind = Kind::kDisc;
  Vec3 center;                 // disc
  double radius = 0.01;        // disc, meters
  std::array<Vec3, 4> corners; // quad
  Rgb color;
  float alpha = 1.0f;
  bool effector = false;       // marks effector glyph pixels for diagnostics
};

struct Palette {
  Rgb bg, table, rack, shelf, box, box_inner, lid, pen, book, lamp, lamp_on, glow, button,
      effector, effector2, arm;
};

inline const Palette& palette(Domain d) {
  static const Palette hand{
      {0.78f, 0.72f, 0.62f},  // bg: warm beige
      {0.70f, 0.62f, 0.50f},  // table
      {0.55f, 0.48f, 0.38f},  // rack
      {0.60f, 0.52f, 0.40f},  // shelf
      {0.45f, 0.36f, 0.24f},  // box
      {0.25f, 0.20f, 0.14f},  // box inner
      {0.58f, 0.46f, 0.30f},  // lid
      {0.15f, 0.25f, 0.75f},  // pen
      {0.70f, 0.15f, 0.12f},  // book
      {0.50f, 0.50f, 0.45f},  // lamp off
      {0.98f, 0.92f, 0.35f},  // lamp on
      {0.95f, 0.90f, 0.55f},  // glow
      {0.85f, 0.30f, 0.25f},  // button
      {0.89f, 0.68f, 0.52f},  // effector: skin tone
      {0.82f, 0.58f, 0.44f},  // effector secondary
      {0.89f, 0.68f, 0.52f},  // arm (hand tone)
  };
  static const Palette robot{
      {0.62f, 0.66f, 0.74f},  // bg: cool gray-blue
      {0.52f, 0.56f, 0.62f},  // table
      {0.40f, 0.44f, 0.50f},  // rack
      {0.45f, 0.49f, 0.54f},  // shelf
      {0.35f, 0.30f, 0.22f},  // box
      {0.18f, 0.16f, 0.12f},  // box inner
      {0.48f, 0.40f, 0.28f},  // lid
      {0.12f, 0.22f, 0.70f},  // pen
      {0.64f, 0.12f, 0.10f},  // book
      {0.46f, 0.46f, 0.42f},  // lamp off
      {0.96f, 0.90f, 0.32f},  // lamp on
      {0.93f, 0.88f, 0.52f},  // glow
      {0.80f, 0.26f, 0.22f},  // button
      {0.30f, 0.32f, 0.36f},  // effector: gray gripper
      {0.20f, 0.22f, 0.26f},  // effector secondary
      {0.42f, 0.44f, 0.48f},  // arm
  };
  return d == Domain::kHand ? hand : robot;
}

inline constexpr int kImageSize = 64;

inline const CameraRig& default_rig() {
  static const CameraRig rig = [] {
    CameraRig r;
    r.left = stereo::camera_look_at({-0.32, -0.80, 0.62}, {0, 0.02, 0}, 72, kImageSize, kImageSize);
    r.right = stereo::camera_look_at({0.32, -0.80, 0.62}, {0, 0.02, 0}, 72, kImageSize, kImageSize);
    return r;
  }();
  return rig;
}

inline Camera wrist_camera(const Vec3& effector) {
  return stereo::camera_look_at(effector + Vec3{0, -0.02, 0.17}, effector, 150, kImageSize,
                                kImageSize, {0, 1, 0});
}

namespace detail {

inline void blend(Tensor& img, int x, int y, const Rgb& c, float a) {
  if (a <= 0) return;
  int w = img.dim(2), h = img.dim(1);
  if (x < 0 || x >= w || y < 0 || y >= h) return;
  int64_t plane = static_cast<int64_t>(h) * w;
  int64_t idx = static_cast<int64_t>(y) * w + x;
  img[idx] = img[idx] * (1 - a) + c.r * a;
  img[plane + idx] = img[plane + idx] * (1 - a) + c.g * a;
  img[2 * plane + idx] = img[2 * plane + idx] * (1 - a) + c.b * a;
}

inline void draw_disc(Tensor& img, const Camera& cam, const Vec3& center, double radius,
                      const Rgb& color, float alpha) {
  Vec3 pc = cam.world_to_camera(center);
  if (pc.z <= stereo::kMinDepth) return;
  Pixel px = stereo::project(cam, center);
  double r_px = cam.fx() * radius / pc.z;
  int x0 = static_cast<int>(std::floor(px.u - r_px - 1)), x1 = static_cast<int>(std::ceil(px.u + r_px + 1));
  int y0 = static_cast<int>(std::floor(px.v - r_px - 1)), y1 = static_cast<int>(std::ceil(px.v + r_px + 1));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double d = std::hypot(x + 0.5 - px.u, y + 0.5 - px.v);
      // Coverage-weighted edge keeps the rendered centroid at the projected
      // center to subpixel accuracy.
      float cov = static_cast<float>(std::clamp(r_px - d + 0.5, 0.0, 1.0));
      blend(img, x, y, color, cov * alpha);
    }
}

inline void draw_quad(Tensor& img, const Camera& cam, const std::array<Vec3, 4>& corners,
                      const Rgb& color, float alpha) {
  Pixel p[4];
  for (int i = 0; i < 4; ++i) {
    Vec3 pc = cam.world_to_camera(corners[static_cast<size_t>(i)]);
    if (pc.z <= stereo::kMinDepth) return;
    p[i] = stereo::project(cam, corners[static_cast<size_t>(i)]);
  }
  double minx = p[0].u, maxx = p[0].u, miny = p[0].v, maxy = p[0].v;
  for (int i = 1; i < 4; ++i) {
    minx = std::min(minx, p[i].u);
    maxx = std::max(maxx, p[i].u);
    miny = std::min(miny, p[i].v);
    maxy = std::max(maxy, p[i].v);
  }
  auto edge = [](const Pixel& a, const Pixel& b, double x, double y) {
    return (b.u - a.u) * (y - a.v) - (b.v - a.v) * (x - a.u);
  };
  for (int y = static_cast<int>(std::floor(miny)); y <= static_cast<int>(std::ceil(maxy)); ++y)
    for (int x = static_cast<int>(std::floor(minx)); x <= static_cast<int>(std::ceil(maxx)); ++x) {
      double cx = x + 0.5, cy = y + 0.5;
      double e0 = edge(p[0], p[1], cx, cy);
      double e1 = edge(p[1], p[2], cx, cy);
      double e2 = edge(p[2], p[3], cx, cy);
      double e3 = edge(p[3], p[0], cx, cy);
      bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0 && e3 >= 0) ||
                    (e0 <= 0 && e1 <= 0 && e2 <= 0 && e3 <= 0);
      if (inside) blend(img, x, y, color, alpha);
    }
}

inline std::array<Vec3, 4> flat_rect(const Vec3& center, double hx, double hy, double z) {
  return {Vec3{center.x - hx, center.y - hy, z}, Vec3{center.x + hx, center.y - hy, z},
          Vec3{center.x + hx, center.y + hy, z}, Vec3{center.x - hx, center.y + hy, z}};
}

}  // namespace detail

// Scene geometry as primitives; the same shapes under both palettes.
inline std::vector<Prim> build_primitives(const SceneState& s, Domain d, const Embodiment* emb,
                                          const Layout& L = default_layout()) {
  const Palette& pal = palette(d);
  std::vector<Prim> prims;
  auto quad = [&](const std::array<Vec3, 4>& c, Rgb col, float a = 1.0f) {
    Prim p;
    p.kind = Prim::Kind::kQuad;
    p.corners = c;
    p.color = col;
    p.alpha = a;
    prims.push_back(p);
  };
  auto disc = [&](const Vec3& c, double r, Rgb col, float a = 1.0f, bool eff = false) {
    Prim p;
    p.kind = Prim::Kind::kDisc;
    p.center = c;
    p.radius = r;
    p.color = col;
    p.alpha = a;
    p.effector = eff;
    prims.push_back(p);
  };

  // Table top.
  quad(detail::flat_rect({0, 0, 0}, 0.42, 0.32, 0.0), pal.table);
  // Rack and shelf markers.
  quad(detail::flat_rect(L.rack_slot, 0.065, 0.045, 0.002), pal.rack);
  quad(detail::flat_rect(L.shelf_slot, 0.065, 0.045, L.shelf_slot.z - 0.002), pal.shelf);
  // Box base and interior.
  quad(detail::flat_rect(L.box_center, 0.07, 0.055, 0.004), pal.box);
  if (s.lid_open) {
    quad(detail::flat_rect(L.box_center, 0.055, 0.042, 0.006), pal.box_inner);
    // Lid parked behind the box.
    quad(detail::flat_rect(L.box_center + Vec3{0, 0.105, 0}, 0.06, 0.045, 0.006), pal.lid);
    if (s.pen_place == PenPlace::kInBox) {
      for (int i = -1; i <= 1; ++i)
        disc(L.box_slot + Vec3{0.016 * i, 0, 0.002}, 0.009, pal.pen);
    }
  } else {
    quad(detail::flat_rect(L.box_center, 0.062, 0.047, 0.018), pal.lid);
    disc(L.lid_handle + Vec3{0, 0.005, 0.004}, 0.011, pal.box);
  }
  // Pen on the table (or held).
  if (s.pen_place == PenPlace::kTable || s.pen_place == PenPlace::kHeld) {
    for (int i = -1; i <= 1; ++i)
      disc(s.pen_pos + Vec3{0.016 * i, 0, 0.0}, 0.009, pal.pen);
  }
  // Book.
  if (s.book_place != BookPlace::kHeld) {
    quad(detail::flat_rect(s.book_pos, 0.05, 0.033, s.book_pos.z + 0.008), pal.book);
  } else {
    quad(detail::flat_rect(s.book_pos, 0.05, 0.033, s.book_pos.z - 0.012), pal.book);
  }
  // Lamp: base, head, glow when lit, button.
  disc(L.lamp_base + Vec3{0, 0, 0.005}, 0.035, pal.lamp);
  disc(L.lamp_base + Vec3{0, -0.02, 0.10}, 0.028, s.lamp_on ? pal.lamp_on : pal.lamp);
  if (s.lamp_on) disc(L.lamp_base + Vec3{0, -0.02, 0.10}, 0.055, pal.glow, 0.45f);
  disc(L.lamp_button, 0.012, pal.button);

  // Effector glyph, drawn last.
  bool hand = d == Domain::kHand;
  if (hand) {
    disc(s.effector, 0.022, pal.effector, 1.0f, true);
    disc(s.effector + Vec3{0.020, -0.010, 0.0}, 0.010, pal.effector2, 1.0f, true);
  } else {
    // Arm segments from above, then the gripper jaws.
    for (int i = 1; i <= 3; ++i)
      disc(s.effector + Vec3{0.012 * i, 0.018 * i, 0.05 + 0.03 * i}, 0.013, pal.arm);
    bool closed = s.gripper_closed;
    (void)emb;
    double jaw = closed ? 0.006 : 0.014;
    disc(s.effector, 0.012, pal.effector, 1.0f, true);
    disc(s.effector + Vec3{jaw, 0, 0.004}, 0.007, pal.effector2, 1.0f, true);
    disc(s.effector + Vec3{-jaw, 0, 0.004}, 0.007, pal.effector2, 1.0f, true);
  }
  return prims;
}

inline Tensor rasterize(const std::vector<Prim>& prims, const Camera& cam, const Rgb& bg) {
  Tensor img({3, cam.height, cam.width});
  int64_t plane = static_cast<int64_t>(cam.height) * cam.width;
  for (int64_t i = 0; i < plane; ++i) {
    img[i] = bg.r;
    img[plane + i] = bg.g;
    img[2 * plane + i] = bg.b;
  }
  for (const auto& p : prims) {
    if (p.kind == Prim::Kind::kDisc)
      detail::draw_disc(img, cam, p.center, p.radius, p.color, p.alpha);
    else
      detail::draw_quad(img, cam, p.corners, p.color, p.alpha);
  }
  return img;
}

inline Tensor render(const SceneState& s, Domain d, View view,
                     const CameraRig& rig = default_rig(), const Layout& L = default_layout()) {
  require(view != View::kWrist || d == Domain::kRobot, Err::InvalidView,
          "wrist view exists only in the robot domain");
  Embodiment emb = d == Domain::kHand ? Embodiment::hand() : Embodiment::robot();
  auto prims = build_primitives(s, d, &emb, L);
  const Camera& cam = view == View::kLeft    ? rig.left
                      : view == View::kRight ? rig.right
                                             : wrist_camera(s.effector);
  Camera wcam;
  if (view == View::kWrist) {
    wcam = wrist_camera(s.effector);
    return rasterize(prims, wcam, palette(d).bg);
  }
  return rasterize(prims, cam, palette(d).bg);
}

inline Frame render_frame(const SceneState& s, Domain d, const CameraRig& rig = default_rig(),
                          const Layout& L = default_layout()) {
  Frame f;
  f.domain = d;
  f.left = render(s, d, View::kLeft, rig, L);
  f.right = render(s, d, View::kRight, rig, L);
  if (d == Domain::kRobot) f.wrist = render(s, d, View::kWrist, rig, L);
  return f;
}

// Synthetic effector detection: the projected effector center, invalid when
// it leaves the image or on a simulated detector dropout. The detector model
// itself is out of scope; this stands in for its output.
inline stereo::Detection2D detect_effector(const SceneState& s, View view, int t,
                                           const CameraRig& rig = default_rig(),
                                           double dropout = 0.0, Rng* rng = nullptr) {
  const Camera& cam = view == View::kLeft ? rig.left : rig.right;
  stereo::Detection2D det;
  det.view = view;
  det.t = t;
  Pixel px;
  bool ok = stereo::projects_inside(cam, s.effector, &px);
  if (ok && rng && dropout > 0 && rng->uniform() < dropout) ok = false;
  det.center = px;
  det.valid = ok;
  return det;
}

}  // namespace playmimic::sim
