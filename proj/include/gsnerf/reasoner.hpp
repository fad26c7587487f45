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

namespace gsnerf::reasoner {

using geom::CameraView;
using geom::Vec3;

struct ReasonerConfig {
  int d = 8;   // feature width
  int L = 16;  // depth hypothesis planes
};

// L plane depths, linear in inverse depth over [near, far], ascending.
std::vector<double> plane_depths(double near, double far, int L);

// Continuous plane coordinate of camera-frame depth z (inverse of
// plane_depths); in [0, L-1] iff z is within [near, far].
double plane_coord(double z, double near, double far, int L);

// Registers encoder (enc.*), semantic decoder (dec.*) and cost-volume
// aggregator (cv.*) parameters. Weights are Glorot-uniform, biases zero.
template <class T>
void init_params(ParamStore<T>& store, const ReasonerConfig& cfg, Rng& rng);

// f^I: three stride-1 reflect-padded 3x3 convs, tanh between, linear last.
// image is an [H*W, 3] var.
template <class T>
ad::Var encode(ad::Graph<T>& g, ad::GraphParams<T>& params, ad::Var image, int h, int w);

// f^S from f^I: two 3x3 convs, tanh between, linear last.
template <class T>
ad::Var decode_semantic(ad::Graph<T>& g, ad::GraphParams<T>& params, ad::Var f_image, int h,
                        int w);

template <class T>
struct VolumeOut {
  ad::Var values;  // [H*W*L, d], cell index = (y*W + x)*L + l
  ad::Var prob;    // [H*W, L], rows sum to 1
  ad::Var depth;   // [H*W, 1] soft-argmin expected depth
  std::vector<double> planes;
};

// Plane-sweep volume for view `ref`: masked across-view mean/variance of
// warped f^I, fused to per-cell features, with per-plane probabilities.
template <class T>
VolumeOut<T> build_cost_volume(ad::Graph<T>& g, ad::GraphParams<T>& params,
                               const std::vector<ad::Var>& f_images, int ref,
                               const std::vector<CameraView>& cams, int L);

// Soft-argmin over an externally supplied probability volume.
template <class T>
ad::Var predict_depth(ad::Graph<T>& g, ad::Var prob, const std::vector<double>& planes);

// Gather table for trilinear volume lookups at world points in view `cam`
// ((u, v) bilinear x linear in plane coordinate). Rows with no valid taps
// get all idx = -1 and out_flags[r] = 1.
std::shared_ptr<ad::GatherTable> volume_gather_table(const std::vector<Vec3>& points,
                                                     const CameraView& cam, int L,
                                                     std::vector<uint8_t>* out_flags);

// Gather table for bilinear image-feature lookups (f^I, f^S). Out-of-frame
// or behind-camera points get dead taps and out_flags[r] = 1.
std::shared_ptr<ad::GatherTable> image_gather_table(const std::vector<Vec3>& points,
                                                    const CameraView& cam,
                                                    std::vector<uint8_t>* out_flags);

extern template void init_params<float>(ParamStore<float>&, const ReasonerConfig&, Rng&);
extern template void init_params<double>(ParamStore<double>&, const ReasonerConfig&, Rng&);
extern template ad::Var encode<float>(ad::Graph<float>&, ad::GraphParams<float>&, ad::Var, int, int);
extern template ad::Var encode<double>(ad::Graph<double>&, ad::GraphParams<double>&, ad::Var, int, int);
extern template ad::Var decode_semantic<float>(ad::Graph<float>&, ad::GraphParams<float>&, ad::Var, int, int);
extern template ad::Var decode_semantic<double>(ad::Graph<double>&, ad::GraphParams<double>&, ad::Var, int, int);
extern template VolumeOut<float> build_cost_volume<float>(ad::Graph<float>&, ad::GraphParams<float>&,
                                                          const std::vector<ad::Var>&, int,
                                                          const std::vector<CameraView>&, int);
extern template VolumeOut<double> build_cost_volume<double>(ad::Graph<double>&, ad::GraphParams<double>&,
                                                            const std::vector<ad::Var>&, int,
                                                            const std::vector<CameraView>&, int);
extern template ad::Var predict_depth<float>(ad::Graph<float>&, ad::Var, const std::vector<double>&);
extern template ad::Var predict_depth<double>(ad::Graph<double>&, ad::Var, const std::vector<double>&);

}  // namespace gsnerf::reasoner
