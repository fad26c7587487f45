// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#include "gsnerf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gsnerf::learn {

LossReport make_loss_report(Supervision mode, double l_image, double l_image_mean,
                            double l_depth_or_unused, double l_sem, double l_rc, double l_ssim,
                            double l_smooth) {
  LossReport r;
  r.l_image = l_image;
  r.l_image_mean = l_image_mean;
  r.l_sem = l_sem;
  if (mode == Supervision::WithGtDepth) {
    r.l_depth = l_depth_or_unused;
    r.total = l_image + r.l_depth + kLambdaSem * l_sem;
  } else {
    r.l_rc = l_rc;
    r.l_ssim = l_ssim;
    r.l_smooth = l_smooth;
    r.l_ssl = kLambdaRc * l_rc + kLambdaSsim * l_ssim + kLambdaSmooth * l_smooth;
    r.total = l_image + r.l_ssl + kLambdaSem * l_sem;
  }
  return r;
}

template <class T>
ad::Var loss_image(ad::Graph<T>& g, ad::Var rgb, const Tensor<T>& gt) {
  if (!g.val(rgb).same_shape(gt)) throw std::invalid_argument("loss_image: shape mismatch");
  ad::Var d = g.sub_const(rgb, gt);
  return g.sum_all(g.mul(d, d));
}

template <class T>
ad::Var loss_sem(ad::Graph<T>& g, ad::Var logits, const std::vector<int32_t>& labels) {
  return g.mean_all(g.cross_entropy_rows(logits, labels));
}

template <class T>
ad::Var loss_depth(ad::Graph<T>& g, const std::vector<ad::Var>& pred_depths,
                   const std::vector<const geom::DepthMap*>& gt_depths) {
  if (pred_depths.empty() || pred_depths.size() != gt_depths.size())
    throw std::invalid_argument("loss_depth: need matching prediction/GT lists");
  ad::Var acc;
  for (size_t k = 0; k < pred_depths.size(); ++k) {
    const geom::DepthMap& gt = *gt_depths[k];
    Tensor<T> target({int64_t(gt.values.size())});
    for (size_t i = 0; i < gt.values.size(); ++i) target[int64_t(i)] = static_cast<T>(gt.values[i]);
    ad::Var term = g.smooth_l1_mean(pred_depths[k], target, gt.valid);
    acc = k == 0 ? term : g.add(acc, term);
  }
  return g.mul_scalar(acc, T(1) / static_cast<T>(pred_depths.size()));
}

// ---------------------------------------------------------------------------
// self-supervised pieces

namespace {

// Grayscale (channel mean) of a fixed image as a [H*W] tensor.
template <class T>
Tensor<T> gray_of(const scene::Image& img) {
  const int64_t n = int64_t(img.width) * img.height;
  Tensor<T> out({n});
  for (int64_t i = 0; i < n; ++i)
    out[i] = static_cast<T>((img.rgb[size_t(i) * 3] + img.rgb[size_t(i) * 3 + 1] +
                             img.rgb[size_t(i) * 3 + 2]) / 3.0);
  return out;
}

struct WarpGeom {
  // q = a * D + b in the source camera frame, per destination pixel.
  std::vector<geom::Vec3> a;
  geom::Vec3 b;
};

WarpGeom make_warp_geom(const geom::CameraView& dst, const geom::CameraView& src) {
  WarpGeom wg;
  const geom::Mat3 rel = src.pose.R.transposed() * dst.pose.R;
  wg.b = src.pose.R.transposed_mul(dst.pose.t - src.pose.t);
  wg.a.resize(static_cast<size_t>(dst.width) * dst.height);
  for (int y = 0; y < dst.height; ++y)
    for (int x = 0; x < dst.width; ++x) {
      const geom::Vec3 d{(x - dst.cx) / dst.fx, (y - dst.cy) / dst.fy, 1.0};
      wg.a[static_cast<size_t>(y) * dst.width + x] = rel * d;
    }
  return wg;
}

}  // namespace

template <class T>
ad::Var warp_by_depth(ad::Graph<T>& g, ad::Var depth, const scene::Image& src,
                      const scene::Image& fill, const geom::CameraView& dst_cam,
                      const geom::CameraView& src_cam, std::vector<uint8_t>* valid_mask) {
  const int64_t n = int64_t(dst_cam.width) * dst_cam.height;
  if (g.val(depth).numel() != n) throw std::invalid_argument("warp_by_depth: depth size mismatch");
  const WarpGeom wg = make_warp_geom(dst_cam, src_cam);
  const int sw = src_cam.width, sh = src_cam.height;

  auto sample = [&](int64_t i, double dz, double* rgb, bool* ok, double* du_dD, double* dv_dD,
                    double* uu, double* vv) {
    const geom::Vec3 a = wg.a[static_cast<size_t>(i)];
    const geom::Vec3 q = a * dz + wg.b;
    *ok = q.z > 1e-9;
    if (!*ok) return;
    const double u = src_cam.cx + src_cam.fx * q.x / q.z;
    const double v = src_cam.cy + src_cam.fy * q.y / q.z;
    *ok = u >= 0 && u <= sw - 1 && v >= 0 && v <= sh - 1;
    if (!*ok) return;
    if (du_dD) {
      *du_dD = src_cam.fx * (a.x * q.z - q.x * a.z) / (q.z * q.z);
      *dv_dD = src_cam.fy * (a.y * q.z - q.y * a.z) / (q.z * q.z);
    }
    *uu = u;
    *vv = v;
    if (rgb) {
      int x0 = std::min(static_cast<int>(u), sw - 2);
      int y0 = std::min(static_cast<int>(v), sh - 2);
      const double fu = u - x0, fv = v - y0;
      for (int c = 0; c < 3; ++c) {
        const double v00 = src.px(x0, y0)[c], v01 = src.px(x0 + 1, y0)[c];
        const double v10 = src.px(x0, y0 + 1)[c], v11 = src.px(x0 + 1, y0 + 1)[c];
        rgb[c] = (1 - fv) * ((1 - fu) * v00 + fu * v01) + fv * ((1 - fu) * v10 + fu * v11);
      }
    }
  };

  const Tensor<T>& dval = g.val(depth);
  Tensor<T> out({n, 3});
  std::vector<uint8_t> mask(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < n; ++i) {
    double rgb[3];
    bool ok = false;
    double u, v;
    sample(i, static_cast<double>(dval[i]), rgb, &ok, nullptr, nullptr, &u, &v);
    if (ok) {
      mask[static_cast<size_t>(i)] = 1;
      for (int c = 0; c < 3; ++c) out[i * 3 + c] = static_cast<T>(rgb[c]);
    } else {
      for (int c = 0; c < 3; ++c) out[i * 3 + c] = static_cast<T>(fill.rgb[size_t(i) * 3 + c]);
    }
  }
  if (valid_mask) *valid_mask = mask;

  const ad::Var o{static_cast<int32_t>(g.num_nodes())};
  return g.custom(std::move(out), {depth},
                  [&g, depth, o, n, wg = std::move(wg), mask = std::move(mask), src_cam,
                   src = src, sw, sh]() {
    const Tensor<T>& go = g.grad(o);
    const Tensor<T>& dval2 = g.val(depth);
    Tensor<T>& gd = g.grad_accum(depth);
    for (int64_t i = 0; i < n; ++i) {
      if (!mask[static_cast<size_t>(i)]) continue;
      const geom::Vec3 a = wg.a[static_cast<size_t>(i)];
      const geom::Vec3 q = a * static_cast<double>(dval2[i]) + wg.b;
      const double u = src_cam.cx + src_cam.fx * q.x / q.z;
      const double v = src_cam.cy + src_cam.fy * q.y / q.z;
      const double du = src_cam.fx * (a.x * q.z - q.x * a.z) / (q.z * q.z);
      const double dv = src_cam.fy * (a.y * q.z - q.y * a.z) / (q.z * q.z);
      int x0 = std::min(static_cast<int>(u), sw - 2);
      int y0 = std::min(static_cast<int>(v), sh - 2);
      const double fu = u - x0, fv = v - y0;
      double acc = 0;
      for (int c = 0; c < 3; ++c) {
        const double v00 = src.px(x0, y0)[c], v01 = src.px(x0 + 1, y0)[c];
        const double v10 = src.px(x0, y0 + 1)[c], v11 = src.px(x0 + 1, y0 + 1)[c];
        const double d_du = (1 - fv) * (v01 - v00) + fv * (v11 - v10);
        const double d_dv = (1 - fu) * (v10 - v00) + fu * (v11 - v01);
        acc += static_cast<double>(go[i * 3 + c]) * (d_du * du + d_dv * dv);
      }
      gd[i] += static_cast<T>(acc);
    }
  });
}

template <class T>
ad::Var ssim_graph(ad::Graph<T>& g, ad::Var img, const scene::Image& ref) {
  const int h = ref.height, w = ref.width;
  const int64_t n = int64_t(h) * w;
  if (g.val(img).numel() != n * 3) throw std::invalid_argument("ssim_graph: size mismatch");
  constexpr double kC1 = 1e-4, kC2 = 9e-4;
  // grayscale via fixed [3,1] matmul
  Tensor<T> third({3, 1});
  third.fill(T(1.0 / 3.0));
  ad::Var x = g.matmul(img, g.constant(third));  // [n,1]
  Tensor<T> yt({n, 1});
  const Tensor<T> ygray = gray_of<T>(ref);
  for (int64_t i = 0; i < n; ++i) yt[i] = ygray[i];

  ad::Var mu_x = g.mean3x3(x, h, w);
  Tensor<T> mu_y_t({n, 1}), y_sq({n, 1});
  {
    // fixed-image moments computed directly
    auto reflect = [](int i, int m) { return i < 0 ? -i : (i >= m ? 2 * m - 2 - i : i); };
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        double acc = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            acc += static_cast<double>(
                ygray[int64_t(reflect(yy + dy, h)) * w + reflect(xx + dx, w)]);
        mu_y_t[int64_t(yy) * w + xx] = static_cast<T>(acc / 9.0);
      }
    for (int64_t i = 0; i < n; ++i) y_sq[i] = ygray[i] * ygray[i];
  }
  Tensor<T> sigma_y_t({n, 1});
  {
    auto reflect = [](int i, int m) { return i < 0 ? -i : (i >= m ? 2 * m - 2 - i : i); };
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        double acc = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            acc += static_cast<double>(
                y_sq[int64_t(reflect(yy + dy, h)) * w + reflect(xx + dx, w)]);
        const int64_t i = int64_t(yy) * w + xx;
        sigma_y_t[i] = static_cast<T>(acc / 9.0) - mu_y_t[i] * mu_y_t[i];
      }
  }

  ad::Var x_sq_mean = g.mean3x3(g.mul(x, x), h, w);
  ad::Var sigma_x = g.sub(x_sq_mean, g.mul(mu_x, mu_x));
  ad::Var xy_mean = g.mean3x3(g.mul_const(x, yt), h, w);
  ad::Var sigma_xy = g.sub(xy_mean, g.mul_const(mu_x, mu_y_t));

  // ((2 mx my + C1)(2 sxy + C2)) / ((mx^2 + my^2 + C1)(sx + sy + C2))
  ad::Var num1 = g.add_scalar(g.mul_scalar(g.mul_const(mu_x, mu_y_t), T(2)), T(kC1));
  ad::Var num2 = g.add_scalar(g.mul_scalar(sigma_xy, T(2)), T(kC2));
  Tensor<T> mu_y_sq({n, 1});
  for (int64_t i = 0; i < n; ++i) mu_y_sq[i] = mu_y_t[i] * mu_y_t[i];
  ad::Var den1 = g.add_scalar(g.add_const(g.mul(mu_x, mu_x), mu_y_sq), T(kC1));
  ad::Var den2 = g.add_scalar(g.add_const(sigma_x, sigma_y_t), T(kC2));
  ad::Var ssim_map = g.div(g.mul(num1, num2), g.mul(den1, den2));
  return g.mean_all(ssim_map);
}

template <class T>
SslLoss<T> loss_ssl(ad::Graph<T>& g, const std::vector<ad::Var>& pred_depths,
                    const std::vector<scene::Image>& images,
                    const std::vector<geom::CameraView>& cams, int neighbors) {
  const int K = static_cast<int>(images.size());
  if (K < 2) throw std::invalid_argument("loss_ssl: need K >= 2 views");
  if (pred_depths.size() != images.size() || cams.size() != images.size())
    throw std::invalid_argument("loss_ssl: list size mismatch");
  neighbors = std::clamp(neighbors, 1, K - 1);

  ad::Var rc_acc, ssim_acc;
  int pairs = 0;
  for (int k = 0; k < K; ++k) {
    // nearest views by camera-center distance
    std::vector<std::pair<double, int>> order;
    for (int j = 0; j < K; ++j) {
      if (j == k) continue;
      order.emplace_back((cams[size_t(j)].center() - cams[size_t(k)].center()).norm(), j);
    }
    std::sort(order.begin(), order.end());
    const int h = cams[size_t(k)].height, w = cams[size_t(k)].width;
    const int64_t n = int64_t(h) * w;
    for (int t = 0; t < neighbors; ++t) {
      const int j = order[static_cast<size_t>(t)].second;
      std::vector<uint8_t> mask;
      ad::Var warped = warp_by_depth(g, pred_depths[size_t(k)], images[size_t(j)],
                                     images[size_t(k)], cams[size_t(k)], cams[size_t(j)], &mask);
      int64_t m = 0;
      Tensor<T> mask_t({n});
      for (int64_t i = 0; i < n; ++i) {
        mask_t[i] = mask[static_cast<size_t>(i)] ? T(1) : T(0);
        m += mask[static_cast<size_t>(i)];
      }
      // photometric MSE over valid pixels
      Tensor<T> gt({n, 3});
      for (int64_t i = 0; i < n * 3; ++i) gt[i] = static_cast<T>(images[size_t(k)].rgb[size_t(i)]);
      ad::Var diff = g.sub_const(warped, gt);
      ad::Var sq = g.mul_rows(g.mul(diff, diff), g.constant(mask_t));
      ad::Var mse = g.mul_scalar(g.sum_all(sq), m > 0 ? T(1) / static_cast<T>(3 * m) : T(0));
      rc_acc = pairs == 0 ? mse : g.add(rc_acc, mse);
      // structural term on the filled reconstruction
      ad::Var s = g.rsub_scalar(T(1), ssim_graph(g, warped, images[size_t(k)]));
      ssim_acc = pairs == 0 ? s : g.add(ssim_acc, s);
      ++pairs;
    }
  }
  const T inv_pairs = T(1) / static_cast<T>(pairs);

  ad::Var smooth_acc;
  for (int k = 0; k < K; ++k) {
    const int h = cams[size_t(k)].height, w = cams[size_t(k)].width;
    const Tensor<T> gray = gray_of<T>(images[size_t(k)]);
    Tensor<T> wx({int64_t(h), int64_t(w - 1)}), wy({int64_t(h - 1), int64_t(w)});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x + 1 < w; ++x)
        wx[int64_t(y) * (w - 1) + x] = std::exp(
            -std::abs(static_cast<double>(gray[int64_t(y) * w + x + 1] - gray[int64_t(y) * w + x])) * 10.0);
    for (int y = 0; y + 1 < h; ++y)
      for (int x = 0; x < w; ++x)
        wy[int64_t(y) * w + x] = std::exp(
            -std::abs(static_cast<double>(gray[int64_t(y + 1) * w + x] - gray[int64_t(y) * w + x])) * 10.0);
    ad::Var dx = g.abs(g.diff_x(pred_depths[size_t(k)], h, w));
    ad::Var dy = g.abs(g.diff_y(pred_depths[size_t(k)], h, w));
    ad::Var term = g.add(g.mean_all(g.mul_const(dx, wx)), g.mean_all(g.mul_const(dy, wy)));
    term = g.mul_scalar(term, T(0.5));
    smooth_acc = k == 0 ? term : g.add(smooth_acc, term);
  }

  SslLoss<T> out;
  out.rc = g.mul_scalar(rc_acc, inv_pairs);
  out.ssim = g.mul_scalar(ssim_acc, inv_pairs);
  out.smooth = g.mul_scalar(smooth_acc, T(1) / static_cast<T>(K));
  out.total = g.add(g.add(g.mul_scalar(out.rc, T(kLambdaRc)), g.mul_scalar(out.ssim, T(kLambdaSsim))),
                    g.mul_scalar(out.smooth, T(kLambdaSmooth)));
  return out;
}

template ad::Var loss_image<float>(ad::Graph<float>&, ad::Var, const Tensor<float>&);
template ad::Var loss_image<double>(ad::Graph<double>&, ad::Var, const Tensor<double>&);
template ad::Var loss_sem<float>(ad::Graph<float>&, ad::Var, const std::vector<int32_t>&);
template ad::Var loss_sem<double>(ad::Graph<double>&, ad::Var, const std::vector<int32_t>&);
template ad::Var loss_depth<float>(ad::Graph<float>&, const std::vector<ad::Var>&,
                                   const std::vector<const geom::DepthMap*>&);
template ad::Var loss_depth<double>(ad::Graph<double>&, const std::vector<ad::Var>&,
                                    const std::vector<const geom::DepthMap*>&);
template SslLoss<float> loss_ssl<float>(ad::Graph<float>&, const std::vector<ad::Var>&,
                                        const std::vector<scene::Image>&,
                                        const std::vector<geom::CameraView>&, int);
template SslLoss<double> loss_ssl<double>(ad::Graph<double>&, const std::vector<ad::Var>&,
                                          const std::vector<scene::Image>&,
                                          const std::vector<geom::CameraView>&, int);
template ad::Var warp_by_depth<float>(ad::Graph<float>&, ad::Var, const scene::Image&,
                                      const scene::Image&, const geom::CameraView&,
                                      const geom::CameraView&, std::vector<uint8_t>*);
template ad::Var warp_by_depth<double>(ad::Graph<double>&, ad::Var, const scene::Image&,
                                       const scene::Image&, const geom::CameraView&,
                                       const geom::CameraView&, std::vector<uint8_t>*);
template ad::Var ssim_graph<float>(ad::Graph<float>&, ad::Var, const scene::Image&);
template ad::Var ssim_graph<double>(ad::Graph<double>&, ad::Var, const scene::Image&);

}  // namespace gsnerf::learn
