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

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "playmimic/error.hpp"
#include "playmimic/geometry.hpp"

namespace playmimic::stereo {

// Calibrated pinhole camera. Intrinsics row-major 3x3, extrinsics row-major
// 3x4 mapping world to camera frame. Units: workbench meters, pixels.
struct Camera {
  std::array<double, 9> k{};    // fx 0 cx / 0 fy cy / 0 0 1
  std::array<double, 12> rt{};  // [R | t]
  int width = 0;
  int height = 0;

  double fx() const { return k[0]; }
  double fy() const { return k[4]; }
  double cx() const { return k[2]; }
  double cy() const { return k[5]; }

  Vec3 world_to_camera(const Vec3& p) const {
    return {rt[0] * p.x + rt[1] * p.y + rt[2] * p.z + rt[3],
            rt[4] * p.x + rt[5] * p.y + rt[6] * p.z + rt[7],
            rt[8] * p.x + rt[9] * p.y + rt[10] * p.z + rt[11]};
  }

  Vec3 center() const {
    // -R^T t
    return {-(rt[0] * rt[3] + rt[4] * rt[7] + rt[8] * rt[11]),
            -(rt[1] * rt[3] + rt[5] * rt[7] + rt[9] * rt[11]),
            -(rt[2] * rt[3] + rt[6] * rt[7] + rt[10] * rt[11])};
  }

  // Back-projected ray direction of a pixel, world frame (not normalized).
  Vec3 pixel_ray(const Pixel& px) const {
    double xc = (px.u - cx()) / fx();
    double yc = (px.v - cy()) / fy();
    return {rt[0] * xc + rt[4] * yc + rt[8], rt[1] * xc + rt[5] * yc + rt[9],
            rt[2] * xc + rt[6] * yc + rt[10]};
  }

  // Projection matrix P = K [R|t], row-major 3x4.
  std::array<double, 12> projection_matrix() const {
    std::array<double, 12> p{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) {
        double s = 0;
        for (int q = 0; q < 3; ++q) s += k[i * 3 + q] * rt[q * 4 + j];
        p[i * 4 + j] = s;
      }
    return p;
  }

  void validate() const {
    require(fx() > 0 && fy() > 0, Err::ShapeMismatch, "focal lengths must be positive");
    require(cx() >= 0 && cx() < width && cy() >= 0 && cy() < height, Err::ShapeMismatch,
            "principal point outside image bounds");
    // ||R^T R - I||_inf < 1e-9
    double worst = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int q = 0; q < 3; ++q) s += rt[q * 4 + i] * rt[q * 4 + j];
        worst = std::max(worst, std::fabs(s - (i == j ? 1.0 : 0.0)));
      }
    require(worst < 1e-9, Err::ShapeMismatch, "rotation block is not orthonormal");
  }
};

struct CameraRig {
  Camera left;
  Camera right;

  void validate() const {
    left.validate();
    right.validate();
    require(distance(left.center(), right.center()) > 0, Err::ShapeMismatch,
            "camera centers coincide (zero baseline)");
  }
};

enum class View { kLeft, kRight, kWrist };

struct Detection2D {
  View view = View::kLeft;
  int t = 0;
  Pixel center;
  bool valid = false;
};

struct Trajectory3D {
  std::vector<Vec3> points;
  std::vector<int> timestamps;

  size_t size() const { return points.size(); }
};

inline constexpr double kMinDepth = 1e-6;
inline constexpr double kMinRayAngle = 1e-4;

// Perspective projection. The result may fall outside image bounds; callers
// decide visibility.
inline Pixel project(const Camera& cam, const Vec3& point) {
  Vec3 pc = cam.world_to_camera(point);
  require(pc.z > kMinDepth, Err::DegenerateDepth, "point at or behind the principal plane");
  double inv = 1.0 / pc.z;
  return {cam.fx() * pc.x * inv + cam.k[1] * pc.y * inv + cam.cx(), cam.fy() * pc.y * inv + cam.cy()};
}

inline bool projects_inside(const Camera& cam, const Vec3& point, Pixel* out = nullptr) {
  Vec3 pc = cam.world_to_camera(point);
  if (pc.z <= kMinDepth) return false;
  double inv = 1.0 / pc.z;
  Pixel px{cam.fx() * pc.x * inv + cam.k[1] * pc.y * inv + cam.cx(),
           cam.fy() * pc.y * inv + cam.cy()};
  if (out) *out = px;
  return px.u >= 0 && px.u < cam.width && px.v >= 0 && px.v < cam.height;
}

namespace detail {

// Stacks the four DLT constraint rows (u P3 - P1) X = 0 into A p = b with the
// homogeneous coordinate pinned to 1.
inline void dlt_rows(const Camera& cam, const Pixel& px, double a[2][3], double b[2]) {
  auto p = cam.projection_matrix();
  for (int j = 0; j < 3; ++j) {
    a[0][j] = px.u * p[8 + j] - p[0 + j];
    a[1][j] = px.v * p[8 + j] - p[4 + j];
  }
  b[0] = p[3] - px.u * p[11];
  b[1] = p[7] - px.v * p[11];
}

inline Vec3 solve3x3(double m[3][3], double r[3]) {
  // Gaussian elimination with partial pivoting.
  int idx[3] = {0, 1, 2};
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int row = col + 1; row < 3; ++row)
      if (std::fabs(m[idx[row]][col]) > std::fabs(m[idx[piv]][col])) piv = row;
    std::swap(idx[col], idx[piv]);
    double d = m[idx[col]][col];
    require(std::fabs(d) > 1e-300, Err::ParallelRays, "singular triangulation system");
    for (int row = col + 1; row < 3; ++row) {
      double f = m[idx[row]][col] / d;
      for (int j = col; j < 3; ++j) m[idx[row]][j] -= f * m[idx[col]][j];
      r[idx[row]] -= f * r[idx[col]];
    }
  }
  double x[3];
  for (int col = 2; col >= 0; --col) {
    double s = r[idx[col]];
    for (int j = col + 1; j < 3; ++j) s -= m[idx[col]][j] * x[j];
    x[col] = s / m[idx[col]][col];
  }
  return {x[0], x[1], x[2]};
}

}  // namespace detail

// Sum of squared DLT constraint violations at a candidate point; the
// triangulated point is its global minimizer.
inline double triangulation_residual(const CameraRig& rig, const Pixel& left, const Pixel& right,
                                     const Vec3& p) {
  double a[2][3], b[2];
  double res = 0;
  const Camera* cams[2] = {&rig.left, &rig.right};
  const Pixel* pxs[2] = {&left, &right};
  for (int c = 0; c < 2; ++c) {
    detail::dlt_rows(*cams[c], *pxs[c], a, b);
    for (int r = 0; r < 2; ++r) {
      double v = a[r][0] * p.x + a[r][1] * p.y + a[r][2] * p.z - b[r];
      res += v * v;
    }
  }
  return res;
}

struct TriangulationResult {
  Vec3 point;
  double reprojection_error_px = 0;  // mean over the two views
};

// Linear (DLT) two-view triangulation via the normal equations of the four
// constraint rows.
inline TriangulationResult triangulate(const CameraRig& rig, const Pixel& left,
                                       const Pixel& right) {
  require(left.finite() && right.finite(), Err::ShapeMismatch, "non-finite pixel");
  Vec3 rl = rig.left.pixel_ray(left).normalized();
  Vec3 rr = rig.right.pixel_ray(right).normalized();
  double c = std::clamp(rl.dot(rr), -1.0, 1.0);
  double angle = std::acos(std::fabs(c));
  require(angle > kMinRayAngle, Err::ParallelRays, "viewing rays are (near) parallel");

  double ata[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  double atb[3] = {0, 0, 0};
  double a[2][3], b[2];
  const Camera* cams[2] = {&rig.left, &rig.right};
  const Pixel* pxs[2] = {&left, &right};
  for (int cam = 0; cam < 2; ++cam) {
    detail::dlt_rows(*cams[cam], *pxs[cam], a, b);
    for (int r = 0; r < 2; ++r) {
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) ata[i][j] += a[r][i] * a[r][j];
        atb[i] += a[r][i] * b[r];
      }
    }
  }
  Vec3 p = detail::solve3x3(ata, atb);

  double zl = rig.left.world_to_camera(p).z;
  double zr = rig.right.world_to_camera(p).z;
  require(zl > 0 && zr > 0, Err::BehindCamera, "triangulated point behind a camera");

  TriangulationResult out;
  out.point = p;
  out.reprojection_error_px =
      0.5 * (pixel_distance(project(rig.left, p), left) + pixel_distance(project(rig.right, p), right));
  return out;
}

// Per-frame triangulation with gap filling and smoothing, staged so the
// pieces can be exercised separately.

// Triangulates frames where both views are valid; other slots are left unset.
inline std::vector<std::pair<bool, Vec3>> triangulate_frames(const CameraRig& rig,
                                                             const std::vector<Detection2D>& left,
                                                             const std::vector<Detection2D>& right) {
  require(left.size() == right.size(), Err::ShapeMismatch, "detection streams differ in length");
  std::vector<std::pair<bool, Vec3>> out(left.size(), {false, Vec3{}});
  for (size_t i = 0; i < left.size(); ++i) {
    require(left[i].t == right[i].t, Err::ShapeMismatch, "detection streams not time-aligned");
    if (left[i].valid && right[i].valid) {
      out[i] = {true, triangulate(rig, left[i].center, right[i].center).point};
    }
  }
  return out;
}

// Linear interpolation across interior gaps; leading/trailing gaps take the
// nearest valid point.
inline std::vector<Vec3> interpolate_gaps(const std::vector<std::pair<bool, Vec3>>& frames) {
  int n = static_cast<int>(frames.size());
  int first = -1, last = -1;
  for (int i = 0; i < n; ++i)
    if (frames[static_cast<size_t>(i)].first) {
      if (first < 0) first = i;
      last = i;
    }
  require(first >= 0, Err::EmptyTrack, "no frame with both views valid");
  std::vector<Vec3> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (frames[static_cast<size_t>(i)].first) {
      out[static_cast<size_t>(i)] = frames[static_cast<size_t>(i)].second;
    } else if (i < first) {
      out[static_cast<size_t>(i)] = frames[static_cast<size_t>(first)].second;
    } else if (i > last) {
      out[static_cast<size_t>(i)] = frames[static_cast<size_t>(last)].second;
    } else {
      int lo = i, hi = i;
      while (!frames[static_cast<size_t>(lo)].first) --lo;
      while (!frames[static_cast<size_t>(hi)].first) ++hi;
      double w = double(i - lo) / double(hi - lo);
      out[static_cast<size_t>(i)] =
          frames[static_cast<size_t>(lo)].second * (1.0 - w) + frames[static_cast<size_t>(hi)].second * w;
    }
  }
  return out;
}

// Centered moving average; the window shrinks to the available range at the
// ends.
inline std::vector<Vec3> smooth_moving_average(const std::vector<Vec3>& pts, int window = 5) {
  int n = static_cast<int>(pts.size());
  int half = window / 2;
  std::vector<Vec3> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int lo = std::max(0, i - half), hi = std::min(n - 1, i + half);
    Vec3 acc;
    for (int j = lo; j <= hi; ++j) acc += pts[static_cast<size_t>(j)];
    out[static_cast<size_t>(i)] = acc / double(hi - lo + 1);
  }
  return out;
}

inline Trajectory3D track_trajectory(const CameraRig& rig, const std::vector<Detection2D>& left,
                                     const std::vector<Detection2D>& right, int smooth_window = 5) {
  auto tri = triangulate_frames(rig, left, right);
  auto filled = interpolate_gaps(tri);
  auto smoothed = smooth_moving_average(filled, smooth_window);
  Trajectory3D traj;
  traj.points = std::move(smoothed);
  traj.timestamps.reserve(left.size());
  for (const auto& d : left) traj.timestamps.push_back(d.t);
  return traj;
}

// ---------------------------------------------------------------------------
// Rig JSON: {"left": {"K": [9], "RT": [12], "size": [w,h]}, "right": {...}}
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json camera_to_json(const Camera& cam) {
  nlohmann::ordered_json j;
  j["K"] = cam.k;
  j["RT"] = cam.rt;
  j["size"] = {cam.width, cam.height};
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera cam;
  auto kv = j.at("K").get<std::vector<double>>();
  auto rv = j.at("RT").get<std::vector<double>>();
  auto sv = j.at("size").get<std::vector<int>>();
  require(kv.size() == 9 && rv.size() == 12 && sv.size() == 2, Err::CorruptManifest,
          "camera json fields malformed");
  std::copy(kv.begin(), kv.end(), cam.k.begin());
  std::copy(rv.begin(), rv.end(), cam.rt.begin());
  cam.width = sv[0];
  cam.height = sv[1];
  cam.validate();
  return cam;
}

inline nlohmann::ordered_json rig_to_json(const CameraRig& rig) {
  nlohmann::ordered_json j;
  j["left"] = camera_to_json(rig.left);
  j["right"] = camera_to_json(rig.right);
  return j;
}

inline CameraRig rig_from_json(const nlohmann::json& j) {
  CameraRig rig;
  rig.left = camera_from_json(j.at("left"));
  rig.right = camera_from_json(j.at("right"));
  rig.validate();
  return rig;
}

inline void save_rig(const CameraRig& rig, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), Err::IOFailure, "cannot open " + path);
  f << rig_to_json(rig).dump(2) << "\n";
}

inline CameraRig load_rig(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Err::IOFailure, "cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
  require(!j.is_discarded(), Err::CorruptManifest, "invalid rig json: " + path);
  return rig_from_json(j);
}

// Camera placed at eye looking at target, CV convention (x right, y down,
// z forward). up_hint breaks the roll ambiguity.
inline Camera camera_look_at(const Vec3& eye, const Vec3& target, double focal_px, int width,
                             int height, const Vec3& up_hint = {0, 0, 1}) {
  Vec3 z = (target - eye).normalized();
  // Image-down axis: the component of -up orthogonal to the view direction.
  Vec3 y = (z * up_hint.dot(z) - up_hint);
  if (y.norm() < 1e-9) y = z * Vec3{0, 1, 0}.dot(z) - Vec3{0, 1, 0};
  y = y.normalized();
  Vec3 x = y.cross(z);
  Camera cam;
  cam.k = {focal_px, 0, width / 2.0, 0, focal_px, height / 2.0, 0, 0, 1};
  cam.rt = {x.x, x.y, x.z, -x.dot(eye), y.x, y.y, y.z, -y.dot(eye), z.x, z.y, z.z, -z.dot(eye)};
  cam.width = width;
  cam.height = height;
  return cam;
}

}  // namespace playmimic::stereo
