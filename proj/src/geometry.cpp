// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#include "gsnerf/geometry.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace gsnerf::geom {

bool Pose::is_rigid(double tol) const {
  // R * R^T == I within tol
  const Mat3 rrt = R * R.transposed();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double want = i == j ? 1.0 : 0.0;
      if (std::abs(rrt.at(i, j) - want) > tol) return false;
    }
  return true;
}

void CameraView::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("CameraView: focal lengths must be > 0");
  if (width <= 0 || height <= 0) throw std::invalid_argument("CameraView: bad image size");
  if (!(near > 0) || !(near < far)) throw std::invalid_argument("CameraView: need 0 < near < far");
  if (!pose.is_rigid()) throw std::invalid_argument("CameraView: rotation is not orthonormal");
}

Projection project(const Vec3& point_world, const CameraView& cam) {
  const Vec3 p = cam.pose.to_local(point_world);
  Projection out;
  out.depth = p.z;
  if (p.z <= 0) return out;  // behind the camera: flagged, u/v left at 0
  out.u = cam.cx + cam.fx * p.x / p.z;
  out.v = cam.cy + cam.fy * p.y / p.z;
  out.in_frustum = out.u >= 0 && out.u < cam.width && out.v >= 0 && out.v < cam.height;
  return out;
}

Vec3 unproject(double u, double v, double depth, const CameraView& cam) {
  if (!(depth > 0)) throw std::invalid_argument("unproject: depth must be > 0");
  const Vec3 p_cam{(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth};
  return cam.pose.to_world(p_cam);
}

Vec3 transform_point(const Vec3& p, const Pose& from, const Pose& to) {
  return to.to_local(from.to_world(p));
}

Ray gen_ray(const CameraView& cam, int px, int py) {
  if (px < 0 || px >= cam.width || py < 0 || py >= cam.height)
    throw std::invalid_argument("gen_ray: pixel outside image bounds");
  const Vec3 dir_cam{(px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0};
  Ray r;
  r.origin = cam.center();
  r.dir = (cam.pose.R * dir_cam).normalized();
  r.near = cam.near;
  r.far = cam.far;
  r.px = px;
  r.py = py;
  return r;
}

std::vector<Ray> gen_rays(const CameraView& cam,
                          const std::vector<std::pair<int, int>>& pixels) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& [px, py] : pixels) rays.push_back(gen_ray(cam, px, py));
  return rays;
}

double bilinear_sample(const double* grid, int w, int h, double u, double v) {
  int x0 = static_cast<int>(std::floor(u));
  int y0 = static_cast<int>(std::floor(v));
  x0 = std::clamp(x0, 0, w - 2);
  y0 = std::clamp(y0, 0, h - 2);
  const double fu = u - x0;
  const double fv = v - y0;
  const double v00 = grid[static_cast<size_t>(y0) * w + x0];
  const double v01 = grid[static_cast<size_t>(y0) * w + x0 + 1];
  const double v10 = grid[static_cast<size_t>(y0 + 1) * w + x0];
  const double v11 = grid[static_cast<size_t>(y0 + 1) * w + x0 + 1];
  return (1 - fv) * ((1 - fu) * v00 + fu * v01) + fv * ((1 - fu) * v10 + fu * v11);
}

DepthMap estimate_target_depth(const std::vector<DepthMap>& depths,
                               const std::vector<CameraView>& cams,
                               const CameraView& target) {
  if (depths.empty() || depths.size() != cams.size())
    throw std::invalid_argument("estimate_target_depth: need K >= 1 depth/camera pairs");
  const int w = target.width, h = target.height;
  const size_t n = static_cast<size_t>(w) * h;
  const double tau = kSplatOcclusionFrac * (target.far - target.near);

  // Pass 1: per-pixel minimum contributed z. Pass 2: weighted average of
  // contributions within tau of that minimum. Both passes visit sources in
  // (k, row-major pixel) order so the accumulation order is reproducible.
  std::vector<double> min_z(n, std::numeric_limits<double>::infinity());
  std::vector<double> acc_w(n, 0.0), acc_wz(n, 0.0);

  struct Tap {
    int x, y;
    double w;
  };
  auto taps_of = [&](double u, double v, Tap taps[4]) {
    const int x0 = static_cast<int>(std::floor(u));
    const int y0 = static_cast<int>(std::floor(v));
    const double fu = u - x0;
    const double fv = v - y0;
    taps[0] = {x0, y0, (1 - fu) * (1 - fv)};
    taps[1] = {x0 + 1, y0, fu * (1 - fv)};
    taps[2] = {x0, y0 + 1, (1 - fu) * fv};
    taps[3] = {x0 + 1, y0 + 1, fu * fv};
  };

  for (int pass = 0; pass < 2; ++pass) {
    for (size_t k = 0; k < depths.size(); ++k) {
      const DepthMap& dm = depths[k];
      const CameraView& cam = cams[k];
      for (int y = 0; y < dm.height; ++y) {
        for (int x = 0; x < dm.width; ++x) {
          if (!dm.is_valid(x, y)) continue;
          const Vec3 world = unproject(x, y, dm.at(x, y), cam);
          const Projection pr = project(world, target);
          if (pr.depth <= 0) continue;
          Tap taps[4];
          taps_of(pr.u, pr.v, taps);
          for (const Tap& tp : taps) {
            if (tp.w <= 0 || tp.x < 0 || tp.x >= w || tp.y < 0 || tp.y >= h) continue;
            const size_t i = static_cast<size_t>(tp.y) * w + tp.x;
            if (pass == 0) {
              min_z[i] = std::min(min_z[i], pr.depth);
            } else if (pr.depth <= min_z[i] + tau) {
              acc_w[i] += tp.w;
              acc_wz[i] += tp.w * pr.depth;
            }
          }
        }
      }
    }
  }

  DepthMap out(w, h);
  bool any_valid = false;
  for (size_t i = 0; i < n; ++i) {
    if (acc_w[i] > 0) {
      out.values[i] = std::clamp(acc_wz[i] / acc_w[i], target.near, target.far);
      out.valid[i] = 1;
      any_valid = true;
    }
  }

  if (!any_valid) {
    const double mid = 0.5 * (target.near + target.far);
    std::fill(out.values.begin(), out.values.end(), mid);
    return out;  // all pixels remain flagged invalid
  }

  // Hole fill: nearest valid pixel by squared euclidean distance, ties
  // broken toward smaller (y, x). Grids are small, brute force is fine.
  std::vector<std::pair<int, int>> valid_px;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (out.is_valid(x, y)) valid_px.emplace_back(x, y);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (out.is_valid(x, y)) continue;
      int64_t best = std::numeric_limits<int64_t>::max();
      double best_val = 0;
      for (const auto& [vx, vy] : valid_px) {
        const int64_t dx = vx - x, dy = vy - y;
        const int64_t d2 = dx * dx + dy * dy;
        if (d2 < best) {
          best = d2;
          best_val = out.at(vx, vy);
        }
      }
      out.at(x, y) = best_val;
    }
  }
  return out;
}

}  // namespace gsnerf::geom
