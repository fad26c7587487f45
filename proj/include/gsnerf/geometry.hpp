// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace gsnerf::geom {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const { return *this / norm(); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Row-major 3x3.
struct Mat3 {
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  double& at(int r, int c) { return m[r * 3 + c]; }
  double at(int r, int c) const { return m[r * 3 + c]; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += at(i, k) * o.at(k, j);
        r.at(i, j) = acc;
      }
    return r;
  }
  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.at(i, j) = at(j, i);
    return r;
  }
  Vec3 transposed_mul(const Vec3& v) const {
    return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
            m[1] * v.x + m[4] * v.y + m[7] * v.z,
            m[2] * v.x + m[5] * v.y + m[8] * v.z};
  }
};

// Rigid camera-to-world transform: x_world = R * x_cam + t.
struct Pose {
  Mat3 R;
  Vec3 t;

  Vec3 to_world(const Vec3& p_cam) const { return R * p_cam + t; }
  Vec3 to_local(const Vec3& p_world) const { return R.transposed_mul(p_world - t); }
  bool is_rigid(double tol = 1e-6) const;
};

// Pinhole camera. Camera frame: +z forward, +x right, +y down;
// u = cx + fx*x/z, v = cy + fy*y/z, continuous pixel coords equal to
// integer pixel indices (no half-pixel offset).
struct CameraView {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 0, height = 0;
  Pose pose;           // camera-to-world
  double near = 0.1;   // b_l
  double far = 10.0;   // b_u

  void validate() const;  // throws std::invalid_argument on broken invariants
  Vec3 center() const { return pose.t; }
};

struct Ray {
  Vec3 origin;
  Vec3 dir;        // unit
  double near = 0, far = 0;
  int px = 0, py = 0;  // emitting pixel
};

struct DepthMap {
  int width = 0, height = 0;
  std::vector<double> values;    // invalid entries hold 0
  std::vector<uint8_t> valid;

  DepthMap() = default;
  DepthMap(int w, int h)
      : width(w), height(h),
        values(static_cast<size_t>(w) * h, 0.0),
        valid(static_cast<size_t>(w) * h, 0) {}

  double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
  bool is_valid(int x, int y) const { return valid[static_cast<size_t>(y) * width + x] != 0; }
};

struct Projection {
  double u = 0, v = 0;
  double depth = 0;      // z in camera frame
  bool in_frustum = false;
};

// Occlusion band for the target-depth splat, as a fraction of (far - near).
inline constexpr double kSplatOcclusionFrac = 0.05;

Projection project(const Vec3& point_world, const CameraView& cam);
Vec3 unproject(double u, double v, double depth, const CameraView& cam);
Vec3 transform_point(const Vec3& p, const Pose& from, const Pose& to);

Ray gen_ray(const CameraView& cam, int px, int py);
std::vector<Ray> gen_rays(const CameraView& cam,
                          const std::vector<std::pair<int, int>>& pixels);

// Bilinear sample of an H*W scalar grid at continuous (u, v); caller
// guarantees u in [0, w-1], v in [0, h-1].
double bilinear_sample(const double* grid, int w, int h, double u, double v);

// Reprojects every valid source-depth pixel into the target view with an
// occlusion-aware bilinear splat, then fills splat holes from the nearest
// valid neighbor ((near+far)/2 if the whole map is empty). Filled pixels are
// reported invalid.
DepthMap estimate_target_depth(const std::vector<DepthMap>& depths,
                               const std::vector<CameraView>& cams,
                               const CameraView& target);

}  // namespace gsnerf::geom
