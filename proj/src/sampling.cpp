// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#include "gsnerf/sampling.hpp"

#include <algorithm>
#include <stdexcept>

namespace gsnerf::sampling {

double guided_stddev(double z, double near, double far) {
  const double v = std::min(std::abs(z - far), std::abs(z - near)) / 3.0;
  return std::max(v, kStddevFloorFrac * (far - near));
}

SampleSet sample_uniform(const Ray& ray, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_uniform: need n >= 1");
  SampleSet out;
  out.kind = Kind::Uniform;
  out.ts.resize(static_cast<size_t>(n));
  const double span = (ray.far - ray.near) / n;
  for (int i = 0; i < n; ++i)
    out.ts[static_cast<size_t>(i)] = ray.near + (i + rng.uniform()) * span;
  return out;
}

SampleSet sample_depth_guided(const Ray& ray, double z, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_depth_guided: need n >= 1");
  if (z < ray.near || z > ray.far)
    throw std::invalid_argument("sample_depth_guided: z outside [near, far]");
  const double v = guided_stddev(z, ray.near, ray.far);
  SampleSet out;
  out.kind = Kind::DepthGuided;
  out.ts.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    out.ts[static_cast<size_t>(i)] = std::clamp(rng.normal(z, v), ray.near, ray.far);
  std::sort(out.ts.begin(), out.ts.end());
  return out;
}

SampleSet sample_mixed(const Ray& ray, double z, int n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("sample_mixed: need n >= 2");
  const int n_uniform = (n + 1) / 2;
  const int n_guided = n / 2;
  SampleSet a = sample_uniform(ray, n_uniform, rng);
  const SampleSet b = sample_depth_guided(ray, z, n_guided, rng);
  a.kind = Kind::Mixed;
  a.ts.insert(a.ts.end(), b.ts.begin(), b.ts.end());
  std::sort(a.ts.begin(), a.ts.end());
  return a;
}

std::vector<Vec3> points_from_t(const Ray& ray, const std::vector<double>& ts) {
  std::vector<Vec3> out;
  out.reserve(ts.size());
  for (double t : ts) out.push_back(ray.origin + ray.dir * t);
  return out;
}

}  // namespace gsnerf::sampling
