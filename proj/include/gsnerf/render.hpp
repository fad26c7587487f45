// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <vector>

#include "gsnerf/geometry.hpp"
#include "gsnerf/graph.hpp"
#include "gsnerf/graph_params.hpp"
#include "gsnerf/param_store.hpp"
#include "gsnerf/rng.hpp"
#include "gsnerf/sampling.hpp"

namespace gsnerf::render {

using geom::CameraView;
using geom::Ray;
using geom::Vec3;

struct RenderConfig {
  int d = 8;                  // reasoner feature width
  int hidden = 32;            // per-view MLP width
  int pe_octaves = 4;         // positional-encoding octaves for x and phi
  double eps_occ_frac = 0.02; // occlusion band as a fraction of (far - near)
  int num_classes = 6;
};

int pe_dim(int octaves);  // 3 * (1 + 2*octaves)
void positional_encode(const Vec3& p, int octaves, double* out);

// Registers volume-renderer (vr.*) and semantic-renderer (sr.*) weights.
template <class T>
void init_params(ParamStore<T>& store, const RenderConfig& cfg, Rng& rng);

// Everything the renderers need about a batch of sample points that is
// decided outside the graph: gather tables, occlusion masks, positional
// encodings and compositing deltas. R rays x N samples (N = 1 for the
// semantic surface batch).
template <class T>
struct PointBatch {
  int64_t rows = 0;
  int R = 0, N = 0, K = 0;
  std::vector<std::shared_ptr<ad::GatherTable>> img_tables;
  std::vector<std::shared_ptr<ad::GatherTable>> vol_tables;  // empty for semantic batches
  std::vector<Tensor<T>> view_mask;  // K tensors [rows], entries 0/1
  Tensor<T> recip_count;             // [rows], 1 / (# unmasked views)
  Tensor<T> pe_x;                    // [rows, pe]
  Tensor<T> pe_phi;                  // [rows, pe]
  Tensor<T> delta;                   // [R, N]
  std::vector<uint8_t> fallback;     // [rows]; 1 where every view was masked
};

// Occlusion rule: view k is masked for a point iff the reprojection loses
// bilinear support, the point sits behind the camera, the camera-frame depth
// exceeds D_k(w(x)) + eps_occ, or (volume lookups) the depth leaves the
// hypothesis range. Fully-masked points fall back to all views unmasked and
// are flagged.
template <class T>
PointBatch<T> make_point_batch(const std::vector<Ray>& rays,
                               const std::vector<sampling::SampleSet>& samples,
                               const std::vector<CameraView>& cams,
                               const std::vector<const double*>& view_depths, int L,
                               const RenderConfig& cfg);

// N = 1 batch at the surface points o + z*phi.
template <class T>
PointBatch<T> make_surface_batch(const std::vector<Ray>& rays, const std::vector<double>& zs,
                                 const std::vector<CameraView>& cams,
                                 const std::vector<const double*>& view_depths,
                                 const RenderConfig& cfg);

template <class T>
struct VolumeRenderOut {
  ad::Var rgb;         // [R, 3]
  ad::Var t_residual;  // [R, 1] transmittance past the last sample
  ad::Var sigma;       // [rows, 1]
  ad::Var color;       // [rows, 3]
  ad::Var weights;     // [R, N]
  ad::Var global;      // [rows, 4d] aggregated [mean; var]
};

template <class T>
VolumeRenderOut<T> volume_render(ad::Graph<T>& g, ad::GraphParams<T>& params,
                                 const PointBatch<T>& batch,
                                 const std::vector<ad::Var>& f_images,
                                 const std::vector<ad::Var>& f_volumes,
                                 const RenderConfig& cfg);

template <class T>
struct SemanticRenderOut {
  ad::Var logits;  // [rows, C]
  ad::Var global;  // [rows, 2d]
};

template <class T>
SemanticRenderOut<T> semantic_render(ad::Graph<T>& g, ad::GraphParams<T>& params,
                                     const PointBatch<T>& batch,
                                     const std::vector<ad::Var>& f_sems,
                                     const RenderConfig& cfg);

// Graph-level compositing of [R, N] densities and [R*N, 3] colors with fixed
// deltas: alpha_n = 1 - exp(-sigma_n * delta_n), T_n = exp(-cumsum).
template <class T>
struct CompositeOut {
  ad::Var rgb;
  ad::Var t_residual;
  ad::Var weights;
};

template <class T>
CompositeOut<T> composite(ad::Graph<T>& g, ad::Var sigma_rows1, ad::Var color_rows3,
                          const Tensor<T>& delta);

// Plain per-ray compositing; ts must be sorted ascending, far caps the last
// delta. This is the reference path unit tests exercise directly.
struct RayComposite {
  Vec3 rgb;
  double t_residual = 1.0;
  std::vector<double> weights;
};
RayComposite composite_ray(const std::vector<double>& ts, const std::vector<double>& sigmas,
                           const std::vector<Vec3>& colors, double far);

extern template void init_params<float>(ParamStore<float>&, const RenderConfig&, Rng&);
extern template void init_params<double>(ParamStore<double>&, const RenderConfig&, Rng&);
extern template PointBatch<float> make_point_batch<float>(
    const std::vector<Ray>&, const std::vector<sampling::SampleSet>&,
    const std::vector<CameraView>&, const std::vector<const double*>&, int, const RenderConfig&);
extern template PointBatch<double> make_point_batch<double>(
    const std::vector<Ray>&, const std::vector<sampling::SampleSet>&,
    const std::vector<CameraView>&, const std::vector<const double*>&, int, const RenderConfig&);
extern template PointBatch<float> make_surface_batch<float>(
    const std::vector<Ray>&, const std::vector<double>&, const std::vector<CameraView>&,
    const std::vector<const double*>&, const RenderConfig&);
extern template PointBatch<double> make_surface_batch<double>(
    const std::vector<Ray>&, const std::vector<double>&, const std::vector<CameraView>&,
    const std::vector<const double*>&, const RenderConfig&);
extern template VolumeRenderOut<float> volume_render<float>(
    ad::Graph<float>&, ad::GraphParams<float>&, const PointBatch<float>&,
    const std::vector<ad::Var>&, const std::vector<ad::Var>&, const RenderConfig&);
extern template VolumeRenderOut<double> volume_render<double>(
    ad::Graph<double>&, ad::GraphParams<double>&, const PointBatch<double>&,
    const std::vector<ad::Var>&, const std::vector<ad::Var>&, const RenderConfig&);
extern template SemanticRenderOut<float> semantic_render<float>(
    ad::Graph<float>&, ad::GraphParams<float>&, const PointBatch<float>&,
    const std::vector<ad::Var>&, const RenderConfig&);
extern template SemanticRenderOut<double> semantic_render<double>(
    ad::Graph<double>&, ad::GraphParams<double>&, const PointBatch<double>&,
    const std::vector<ad::Var>&, const RenderConfig&);
extern template CompositeOut<float> composite<float>(ad::Graph<float>&, ad::Var, ad::Var,
                                                     const Tensor<float>&);
extern template CompositeOut<double> composite<double>(ad::Graph<double>&, ad::Var, ad::Var,
                                                       const Tensor<double>&);

}  // namespace gsnerf::render
