// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsnerf/geometry.hpp"

namespace gsnerf::scene {

using geom::CameraView;
using geom::DepthMap;
using geom::Ray;
using geom::Vec3;

struct Image {
  int width = 0, height = 0;
  std::vector<double> rgb;  // H*W*3, values in [0,1]

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0.0) {}
  double* px(int x, int y) { return rgb.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const double* px(int x, int y) const {
    return rgb.data() + (static_cast<size_t>(y) * width + x) * 3;
  }
};

struct LabelMap {
  int width = 0, height = 0;
  std::vector<int32_t> ids;  // H*W

  LabelMap() = default;
  LabelMap(int w, int h) : width(w), height(h), ids(static_cast<size_t>(w) * h, 0) {}
  int32_t at(int x, int y) const { return ids[static_cast<size_t>(y) * width + x]; }
  int32_t& at(int x, int y) { return ids[static_cast<size_t>(y) * width + x]; }
};

enum class ShapeKind { Sphere, Box, Plane };

struct Primitive {
  ShapeKind kind = ShapeKind::Sphere;
  Vec3 center;        // sphere/box center, or a point on the plane
  double radius = 0;  // sphere
  Vec3 half_extent;   // box
  Vec3 normal;        // plane (unit)
  Vec3 albedo;
  int class_id = 0;
};

struct Scene {
  std::vector<Primitive> primitives;
  Vec3 background_albedo{0.05, 0.05, 0.08};
  int background_class = 0;
  Vec3 light_dir{0.3, -0.5, -0.8};  // unit, points from surfaces toward the light
  double ambient = 0.35;
  int num_classes = 6;
};

struct TraceResult {
  Vec3 rgb;
  double t = -1.0;        // distance along the ray; < 0 means background
  int class_id = 0;
  bool hit = false;
};

// Generator knobs. Placed primitives stay inside [placement_min, placement_max];
// the optional backdrop is a wall behind the volume so nearly every pixel has
// finite ground-truth depth.
struct SceneSpec {
  int min_spheres = 2, max_spheres = 4;
  int min_boxes = 1, max_boxes = 3;
  bool backdrop = true;
  Vec3 placement_min{-1.3, -1.3, -0.9};
  Vec3 placement_max{1.3, 1.3, 0.9};
  double backdrop_z = 1.8;
  double sphere_radius_min = 0.3, sphere_radius_max = 0.6;
  double box_half_min = 0.25, box_half_max = 0.55;
  int num_classes = 6;
};

struct RigSpec {
  int k_sources = 8;
  int width = 64, height = 64;
  double focal = 72.0;            // fx = fy, pixels
  double distance = 3.5;          // camera centers to scene origin, meters
  double max_angle_deg = 40.0;    // source offset from the target direction
  double min_sep_deg = 10.0;      // pairwise source separation
  double near = 2.0, far = 10.0;
};

struct View {
  Image image;
  DepthMap depth;
  LabelMap labels;
  CameraView cam;
};

struct SceneBundle {
  std::vector<View> sources;
  View target;
  std::string scene_id;
  int num_classes = 0;
  std::vector<std::string> class_names;
};

Scene build_scene(uint64_t seed, const SceneSpec& spec);
TraceResult trace(const Scene& scene, const Ray& ray);

// Sources on a sphere cap around the target direction, all looking at the
// scene origin. Returns K source cameras; *target gets the cap-center camera.
std::vector<CameraView> make_rig(uint64_t seed, const RigSpec& spec, CameraView* target);

// Renders one view per camera; cams.back() is taken as the target view.
// Depths are stored in camera-z convention.
SceneBundle render_views(const Scene& scene, const std::vector<CameraView>& cams);

View render_view(const Scene& scene, const CameraView& cam, int num_classes);

std::vector<std::string> default_class_names(int num_classes);

}  // namespace gsnerf::scene
