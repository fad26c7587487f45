// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "gsnerf/geometry.hpp"
#include "gsnerf/graph.hpp"
#include "gsnerf/scenegen.hpp"

namespace gsnerf::learn {

// Loss weights fixed by the training recipe.
inline constexpr double kLambdaSem = 0.5;
inline constexpr double kLambdaRc = 1.0;
inline constexpr double kLambdaSsim = 0.2;
inline constexpr double kLambdaSmooth = 0.0067;

enum class Supervision { WithGtDepth, SelfSupervised };

struct LossReport {
  double l_image = 0;       // sum over the ray batch
  double l_image_mean = 0;  // per-ray mean, for logging
  double l_depth = 0;
  double l_ssl = 0;
  double l_rc = 0;
  double l_ssim = 0;
  double l_smooth = 0;
  double l_sem = 0;
  double total = 0;
  double lambda_sem = kLambdaSem;
  double lambda1 = kLambdaRc;
  double lambda2 = kLambdaSsim;
  double lambda3 = kLambdaSmooth;
};

// Validates that `total` is the documented weighted sum for the mode.
LossReport make_loss_report(Supervision mode, double l_image, double l_image_mean,
                            double l_depth_or_unused, double l_sem, double l_rc, double l_ssim,
                            double l_smooth);

// Sum over the ray batch of ||C(r) - gt(r)||^2. gt is an [R, 3] tensor.
template <class T>
ad::Var loss_image(ad::Graph<T>& g, ad::Var rgb, const Tensor<T>& gt);

// Mean multi-class cross entropy (log-sum-exp stabilized).
template <class T>
ad::Var loss_sem(ad::Graph<T>& g, ad::Var logits, const std::vector<int32_t>& labels);

// (1/K) sum_k mean over valid pixels of smooth-L1(D_k - GT_k), beta = 1.
template <class T>
ad::Var loss_depth(ad::Graph<T>& g, const std::vector<ad::Var>& pred_depths,
                   const std::vector<const geom::DepthMap*>& gt_depths);

template <class T>
struct SslLoss {
  ad::Var total;   // lambda1*rc + lambda2*ssim + lambda3*smooth
  ad::Var rc;
  ad::Var ssim;
  ad::Var smooth;
};

// Cross-view consistency: each view is reconstructed by inverse-warping its
// `neighbors` nearest views through its predicted depth; photometric MSE +
// (1 - SSIM) on the reconstruction plus edge-aware depth smoothness.
template <class T>
SslLoss<T> loss_ssl(ad::Graph<T>& g, const std::vector<ad::Var>& pred_depths,
                    const std::vector<scene::Image>& images,
                    const std::vector<geom::CameraView>& cams, int neighbors);

// Inverse warp of src into dst's frame through dst's depth (graph input
// [H*W, 1]); differentiable w.r.t. depth including the reprojection
// coordinates. Pixels without a valid warp are filled from `fill` and
// excluded via *valid_mask.
template <class T>
ad::Var warp_by_depth(ad::Graph<T>& g, ad::Var depth, const scene::Image& src,
                      const scene::Image& fill, const geom::CameraView& dst_cam,
                      const geom::CameraView& src_cam, std::vector<uint8_t>* valid_mask);

// Mean local SSIM between a graph image [H*W, 3] and a fixed image, computed
// on channel-mean grayscale with a 3x3 box window. C1 = 1e-4, C2 = 9e-4.
template <class T>
ad::Var ssim_graph(ad::Graph<T>& g, ad::Var img, const scene::Image& ref);

extern template ad::Var loss_image<float>(ad::Graph<float>&, ad::Var, const Tensor<float>&);
extern template ad::Var loss_image<double>(ad::Graph<double>&, ad::Var, const Tensor<double>&);
extern template ad::Var loss_sem<float>(ad::Graph<float>&, ad::Var, const std::vector<int32_t>&);
extern template ad::Var loss_sem<double>(ad::Graph<double>&, ad::Var, const std::vector<int32_t>&);
extern template ad::Var loss_depth<float>(ad::Graph<float>&, const std::vector<ad::Var>&,
                                          const std::vector<const geom::DepthMap*>&);
extern template ad::Var loss_depth<double>(ad::Graph<double>&, const std::vector<ad::Var>&,
                                           const std::vector<const geom::DepthMap*>&);
extern template SslLoss<float> loss_ssl<float>(ad::Graph<float>&, const std::vector<ad::Var>&,
                                               const std::vector<scene::Image>&,
                                               const std::vector<geom::CameraView>&, int);
extern template SslLoss<double> loss_ssl<double>(ad::Graph<double>&, const std::vector<ad::Var>&,
                                                 const std::vector<scene::Image>&,
                                                 const std::vector<geom::CameraView>&, int);
extern template ad::Var warp_by_depth<float>(ad::Graph<float>&, ad::Var, const scene::Image&,
                                             const scene::Image&, const geom::CameraView&,
                                             const geom::CameraView&, std::vector<uint8_t>*);
extern template ad::Var warp_by_depth<double>(ad::Graph<double>&, ad::Var, const scene::Image&,
                                              const scene::Image&, const geom::CameraView&,
                                              const geom::CameraView&, std::vector<uint8_t>*);
extern template ad::Var ssim_graph<float>(ad::Graph<float>&, ad::Var, const scene::Image&);
extern template ad::Var ssim_graph<double>(ad::Graph<double>&, ad::Var, const scene::Image&);

}  // namespace gsnerf::learn
