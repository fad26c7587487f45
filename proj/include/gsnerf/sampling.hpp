// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "gsnerf/geometry.hpp"
#include "gsnerf/rng.hpp"

namespace gsnerf::sampling {

using geom::Ray;
using geom::Vec3;

enum class Kind { Uniform, DepthGuided, Mixed };

struct SampleSet {
  std::vector<double> ts;  // ascending, all within [near, far]
  Kind kind = Kind::Uniform;
};

// Relative floor on the depth-guided stddev so z at a bound never collapses
// the distribution to a delta.
inline constexpr double kStddevFloorFrac = 1e-3;

// Stddev of the depth-guided Gaussian: min(|z-far|, |z-near|) / 3, floored
// at kStddevFloorFrac * (far - near).
double guided_stddev(double z, double near, double far);

// One draw per stratified bin over [near, far); monotone by construction.
SampleSet sample_uniform(const Ray& ray, int n, Rng& rng);

// n Gaussian draws around z, clamped to [near, far], sorted ascending.
SampleSet sample_depth_guided(const Ray& ray, double z, int n, Rng& rng);

// ceil(n/2) uniform + floor(n/2) depth-guided, merged and sorted.
SampleSet sample_mixed(const Ray& ray, double z, int n, Rng& rng);

std::vector<Vec3> points_from_t(const Ray& ray, const std::vector<double>& ts);

}  // namespace gsnerf::sampling
