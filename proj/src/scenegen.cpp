// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#include "gsnerf/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gsnerf/parallel.hpp"
#include "gsnerf/rng.hpp"

namespace gsnerf::scene {

namespace {

constexpr double kTMin = 1e-9;
constexpr double kPi = 3.14159265358979323846;

struct Hit {
  double t = -1;
  Vec3 normal;
  bool ok = false;
};

Hit hit_sphere(const Primitive& p, const Ray& r) {
  const Vec3 oc = r.origin - p.center;
  const double b = oc.dot(r.dir);
  const double c = oc.dot(oc) - p.radius * p.radius;
  const double disc = b * b - c;
  if (disc < 0) return {};
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t < kTMin) t = -b + sq;
  if (t < kTMin) return {};
  const Vec3 n = (r.origin + r.dir * t - p.center) / p.radius;
  return {t, n, true};
}

Hit hit_box(const Primitive& p, const Ray& r) {
  const Vec3 lo = p.center - p.half_extent;
  const Vec3 hi = p.center + p.half_extent;
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  int axis_min = -1;
  const double o[3] = {r.origin.x, r.origin.y, r.origin.z};
  const double d[3] = {r.dir.x, r.dir.y, r.dir.z};
  const double l[3] = {lo.x, lo.y, lo.z};
  const double h[3] = {hi.x, hi.y, hi.z};
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < l[a] || o[a] > h[a]) return {};
      continue;
    }
    double t0 = (l[a] - o[a]) / d[a];
    double t1 = (h[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > tmin) {
      tmin = t0;
      axis_min = a;
    }
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return {};
  }
  double t = tmin;
  if (t < kTMin) t = tmax;  // origin inside the box
  if (t < kTMin || t > tmax + 0.0) return {};
  Vec3 n{0, 0, 0};
  if (axis_min >= 0) {
    const double sign = d[axis_min] > 0 ? -1.0 : 1.0;
    if (axis_min == 0) n = {sign, 0, 0};
    else if (axis_min == 1) n = {0, sign, 0};
    else n = {0, 0, sign};
  }
  // Exiting from inside: flip toward the ray origin.
  if (t == tmax && axis_min >= 0) n = -n;
  return {t, n, true};
}

Hit hit_plane(const Primitive& p, const Ray& r) {
  const double denom = p.normal.dot(r.dir);
  if (std::abs(denom) < 1e-12) return {};
  const double t = p.normal.dot(p.center - r.origin) / denom;
  if (t < kTMin) return {};
  // Two-sided: present the face toward the ray.
  const Vec3 n = denom < 0 ? p.normal : -p.normal;
  return {t, n, true};
}

Hit hit_primitive(const Primitive& p, const Ray& r) {
  switch (p.kind) {
    case ShapeKind::Sphere: return hit_sphere(p, r);
    case ShapeKind::Box: return hit_box(p, r);
    case ShapeKind::Plane: return hit_plane(p, r);
  }
  return {};
}

Vec3 shade(const Scene& scene, const Primitive& p, const Vec3& n) {
  const double diffuse = std::max(0.0, n.dot(scene.light_dir));
  const double s = scene.ambient + diffuse * (1.0 - scene.ambient);
  return {std::clamp(p.albedo.x * s, 0.0, 1.0), std::clamp(p.albedo.y * s, 0.0, 1.0),
          std::clamp(p.albedo.z * s, 0.0, 1.0)};
}

// Per-class base albedo; objects get a seeded jitter so segmentation stays
// learnable from appearance without being a trivial color lookup.
Vec3 class_base_color(int class_id) {
  switch (class_id) {
    case 1: return {0.55, 0.55, 0.52};  // wall
    case 2: return {0.85, 0.25, 0.20};
    case 3: return {0.20, 0.45, 0.85};
    case 4: return {0.90, 0.75, 0.20};
    case 5: return {0.25, 0.75, 0.35};
    case 6: return {0.75, 0.30, 0.75};
    case 7: return {0.30, 0.75, 0.75};
    default: return {0.5, 0.5, 0.5};
  }
}

}  // namespace

std::vector<std::string> default_class_names(int num_classes) {
  static const char* kNames[] = {"background", "wall",        "sphere_warm", "sphere_cool",
                                 "box_warm",   "box_cool",    "extra_6",     "extra_7"};
  std::vector<std::string> out;
  for (int i = 0; i < num_classes; ++i)
    out.push_back(i < 8 ? kNames[i] : "class_" + std::to_string(i));
  return out;
}

Scene build_scene(uint64_t seed, const SceneSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("build_scene: need C >= 2");
  if (spec.max_spheres < spec.min_spheres || spec.max_boxes < spec.min_boxes)
    throw std::invalid_argument("build_scene: bad primitive count ranges");
  const int max_total = spec.max_spheres + spec.max_boxes + (spec.backdrop ? 1 : 0);
  if (max_total < 1) throw std::invalid_argument("build_scene: spec admits no primitives");

  Rng rng(mix_seed(seed, 0x5ce9e));
  Scene scene;
  scene.num_classes = spec.num_classes;
  scene.light_dir = Vec3{0.3 + 0.2 * rng.uniform(-1, 1), -0.5 + 0.2 * rng.uniform(-1, 1), -0.8}
                        .normalized();
  scene.ambient = 0.3 + 0.1 * rng.uniform();

  const int n_spheres =
      spec.min_spheres + static_cast<int>(rng.below(spec.max_spheres - spec.min_spheres + 1));
  const int n_boxes =
      spec.min_boxes + static_cast<int>(rng.below(spec.max_boxes - spec.min_boxes + 1));

  auto place = [&](double margin) {
    Vec3 p;
    p.x = rng.uniform(spec.placement_min.x + margin, spec.placement_max.x - margin);
    p.y = rng.uniform(spec.placement_min.y + margin, spec.placement_max.y - margin);
    p.z = rng.uniform(spec.placement_min.z + margin, spec.placement_max.z - margin);
    return p;
  };
  auto jitter_color = [&](int cls) {
    const Vec3 base = class_base_color(cls);
    auto j = [&](double v) { return std::clamp(v + 0.08 * rng.uniform(-1, 1), 0.05, 1.0); };
    return Vec3{j(base.x), j(base.y), j(base.z)};
  };

  for (int i = 0; i < n_spheres; ++i) {
    Primitive p;
    p.kind = ShapeKind::Sphere;
    p.radius = rng.uniform(spec.sphere_radius_min, spec.sphere_radius_max);
    p.center = place(0.0);
    p.class_id = std::min(2 + static_cast<int>(rng.below(2)), spec.num_classes - 1);
    p.albedo = jitter_color(p.class_id);
    scene.primitives.push_back(p);
  }
  for (int i = 0; i < n_boxes; ++i) {
    Primitive p;
    p.kind = ShapeKind::Box;
    p.half_extent = {rng.uniform(spec.box_half_min, spec.box_half_max),
                     rng.uniform(spec.box_half_min, spec.box_half_max),
                     rng.uniform(spec.box_half_min, spec.box_half_max)};
    p.center = place(0.0);
    const int box_class = spec.num_classes > 4 ? 4 + static_cast<int>(rng.below(2)) : 2;
    p.class_id = std::min(box_class, spec.num_classes - 1);
    p.albedo = jitter_color(p.class_id);
    scene.primitives.push_back(p);
  }
  if (spec.backdrop) {
    Primitive p;
    p.kind = ShapeKind::Plane;
    p.center = {0, 0, spec.backdrop_z};
    p.normal = {0, 0, -1};
    p.class_id = std::min(1, spec.num_classes - 1);
    p.albedo = jitter_color(p.class_id);
    scene.primitives.push_back(p);
  }
  if (scene.primitives.empty())
    throw std::invalid_argument("build_scene: spec produced no primitives");
  return scene;
}

TraceResult trace(const Scene& scene, const Ray& ray) {
  TraceResult out;
  double best = std::numeric_limits<double>::infinity();
  const Primitive* best_p = nullptr;
  Vec3 best_n;
  for (const Primitive& p : scene.primitives) {
    const Hit h = hit_primitive(p, ray);
    if (h.ok && h.t < best) {
      best = h.t;
      best_p = &p;
      best_n = h.normal;
    }
  }
  if (!best_p) {
    out.rgb = scene.background_albedo;
    out.class_id = scene.background_class;
    out.t = -1.0;
    out.hit = false;
    return out;
  }
  out.rgb = shade(scene, *best_p, best_n);
  out.class_id = best_p->class_id;
  out.t = best;
  out.hit = true;
  return out;
}

std::vector<CameraView> make_rig(uint64_t seed, const RigSpec& spec, CameraView* target) {
  auto look_at_origin = [&](const Vec3& pos) {
    CameraView cam;
    cam.fx = cam.fy = spec.focal;
    cam.cx = spec.width / 2.0;
    cam.cy = spec.height / 2.0;
    cam.width = spec.width;
    cam.height = spec.height;
    cam.near = spec.near;
    cam.far = spec.far;
    const Vec3 fwd = (Vec3{0, 0, 0} - pos).normalized();
    const Vec3 right = Vec3{0, 1, 0}.cross(fwd).normalized();
    const Vec3 down = fwd.cross(right);
    geom::Mat3 r;
    for (int i = 0; i < 3; ++i) {
      r.at(i, 0) = right[i];
      r.at(i, 1) = down[i];
      r.at(i, 2) = fwd[i];
    }
    cam.pose.R = r;
    cam.pose.t = pos;
    return cam;
  };

  const Vec3 target_dir{0, 0, -1};  // camera sits at -z, looking +z at the origin
  if (target) *target = look_at_origin(target_dir * spec.distance);

  Rng rng(mix_seed(seed, 0xca3e7a));
  const double max_a = spec.max_angle_deg * kPi / 180.0;
  const double min_sep = spec.min_sep_deg * kPi / 180.0;
  std::vector<Vec3> dirs;
  int guard = 0;
  while (static_cast<int>(dirs.size()) < spec.k_sources) {
    if (++guard > 100000)
      throw std::invalid_argument("make_rig: cannot satisfy separation constraints");
    // Uniform over the spherical cap around target_dir.
    const double cos_a = 1.0 - rng.uniform() * (1.0 - std::cos(max_a));
    const double a = std::acos(std::clamp(cos_a, -1.0, 1.0));
    const double b = rng.uniform() * 2.0 * kPi;
    const Vec3 d{std::sin(a) * std::cos(b), std::sin(a) * std::sin(b), -std::cos(a)};
    bool ok = true;
    for (const Vec3& e : dirs)
      if (std::acos(std::clamp(d.dot(e), -1.0, 1.0)) < min_sep) {
        ok = false;
        break;
      }
    if (ok) dirs.push_back(d);
  }
  std::vector<CameraView> cams;
  cams.reserve(dirs.size());
  for (const Vec3& d : dirs) cams.push_back(look_at_origin(d * spec.distance));
  return cams;
}

View render_view(const Scene& scene, const CameraView& cam, int num_classes) {
  (void)num_classes;
  View v;
  v.cam = cam;
  v.image = Image(cam.width, cam.height);
  v.depth = DepthMap(cam.width, cam.height);
  v.labels = LabelMap(cam.width, cam.height);
  parallel_for(cam.height, [&](int64_t yb, int64_t ye, int) {
    for (int64_t y = yb; y < ye; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const Ray r = geom::gen_ray(cam, x, static_cast<int>(y));
        const TraceResult tr = trace(scene, r);
        double* px = v.image.px(x, static_cast<int>(y));
        px[0] = tr.rgb.x;
        px[1] = tr.rgb.y;
        px[2] = tr.rgb.z;
        v.labels.at(x, static_cast<int>(y)) = tr.class_id;
        if (tr.hit) {
          // camera-z convention, matching the geometry module
          const Vec3 p_cam = cam.pose.to_local(r.origin + r.dir * tr.t);
          v.depth.at(x, static_cast<int>(y)) = p_cam.z;
          v.depth.valid[static_cast<size_t>(y) * cam.width + x] = 1;
        }
      }
    }
  });
  return v;
}

SceneBundle render_views(const Scene& scene, const std::vector<CameraView>& cams) {
  if (cams.size() < 2)
    throw std::invalid_argument("render_views: need at least one source and one target camera");
  SceneBundle b;
  b.num_classes = scene.num_classes;
  b.class_names = default_class_names(scene.num_classes);
  for (size_t i = 0; i + 1 < cams.size(); ++i)
    b.sources.push_back(render_view(scene, cams[i], scene.num_classes));
  b.target = render_view(scene, cams.back(), scene.num_classes);
  return b;
}

}  // namespace gsnerf::scene
