// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#include "gsnerf/reasoner.hpp"

#include <cmath>
#include <stdexcept>

#include "gsnerf/parallel.hpp"

namespace gsnerf::reasoner {

std::vector<double> plane_depths(double near, double far, int L) {
  if (L < 2) throw std::invalid_argument("plane_depths: need L >= 2");
  std::vector<double> planes(static_cast<size_t>(L));
  const double inv_near = 1.0 / near, inv_far = 1.0 / far;
  for (int l = 0; l < L; ++l) {
    const double a = static_cast<double>(l) / (L - 1);
    planes[static_cast<size_t>(l)] = 1.0 / (inv_near + a * (inv_far - inv_near));
  }
  return planes;
}

double plane_coord(double z, double near, double far, int L) {
  const double inv_near = 1.0 / near, inv_far = 1.0 / far;
  return (1.0 / z - inv_near) / (inv_far - inv_near) * (L - 1);
}

namespace {

template <class T>
Tensor<T> glorot(Rng& rng, std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out) {
  Tensor<T> t(std::move(shape));
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-s, s));
  return t;
}

}  // namespace

template <class T>
void init_params(ParamStore<T>& store, const ReasonerConfig& cfg, Rng& rng) {
  const int64_t d = cfg.d;
  store.add("enc.w1", glorot<T>(rng, {d, 3, 3, 3}, 9 * 3, 9 * d));
  store.add("enc.b1", Tensor<T>({d}));
  store.add("enc.w2", glorot<T>(rng, {d, 3, 3, d}, 9 * d, 9 * d));
  store.add("enc.b2", Tensor<T>({d}));
  store.add("enc.w3", glorot<T>(rng, {d, 3, 3, d}, 9 * d, 9 * d));
  store.add("enc.b3", Tensor<T>({d}));
  store.add("dec.w1", glorot<T>(rng, {d, 3, 3, d}, 9 * d, 9 * d));
  store.add("dec.b1", Tensor<T>({d}));
  store.add("dec.w2", glorot<T>(rng, {d, 3, 3, d}, 9 * d, 9 * d));
  store.add("dec.b2", Tensor<T>({d}));
  store.add("cv.fuse_w", glorot<T>(rng, {2 * d, d}, 2 * d, d));
  store.add("cv.fuse_b", Tensor<T>({d}));
  store.add("cv.score_w", glorot<T>(rng, {d, 1}, d, 1));
  store.add("cv.score_b", Tensor<T>({1}));
}

template <class T>
ad::Var encode(ad::Graph<T>& g, ad::GraphParams<T>& params, ad::Var image, int h, int w) {
  if (g.val(image).numel() != int64_t(h) * w * 3)
    throw std::invalid_argument("encode: image shape does not match H*W*3");
  ad::Var h1 = g.tanh(g.conv3x3(image, params("enc.w1"), params("enc.b1"), h, w));
  ad::Var h2 = g.tanh(g.conv3x3(h1, params("enc.w2"), params("enc.b2"), h, w));
  return g.conv3x3(h2, params("enc.w3"), params("enc.b3"), h, w);
}

template <class T>
ad::Var decode_semantic(ad::Graph<T>& g, ad::GraphParams<T>& params, ad::Var f_image, int h,
                        int w) {
  ad::Var h1 = g.tanh(g.conv3x3(f_image, params("dec.w1"), params("dec.b1"), h, w));
  return g.conv3x3(h1, params("dec.w2"), params("dec.b2"), h, w);
}

namespace {

// Plane-induced map from ref pixel (u, v) to source-camera coordinates:
// X_src = z_l * Rs^T * Rr * Kr^-1 * (u, v, 1) + Rs^T (tr - ts).
struct PlaneWarp {
  double m[9];
  double c[3];

  void apply(double u, double v, double* x, double* y, double* z) const {
    *x = m[0] * u + m[1] * v + m[2] + c[0];
    *y = m[3] * u + m[4] * v + m[5] + c[1];
    *z = m[6] * u + m[7] * v + m[8] + c[2];
  }
};

PlaneWarp make_plane_warp(const CameraView& ref, const CameraView& src, double plane_z) {
  const geom::Mat3 rel = src.pose.R.transposed() * ref.pose.R;
  // Kr^-1 columns: (1/fx, 0, 0), (0, 1/fy, 0), (-cx/fx, -cy/fy, 1)
  geom::Mat3 kinv;
  kinv.at(0, 0) = 1.0 / ref.fx;
  kinv.at(0, 1) = 0;
  kinv.at(0, 2) = -ref.cx / ref.fx;
  kinv.at(1, 0) = 0;
  kinv.at(1, 1) = 1.0 / ref.fy;
  kinv.at(1, 2) = -ref.cy / ref.fy;
  kinv.at(2, 0) = 0;
  kinv.at(2, 1) = 0;
  kinv.at(2, 2) = 1;
  const geom::Mat3 a = rel * kinv;
  const geom::Vec3 c = src.pose.R.transposed_mul(ref.pose.t - src.pose.t);
  PlaneWarp warp;
  for (int i = 0; i < 9; ++i) warp.m[i] = a.m[i] * plane_z;
  warp.c[0] = c.x;
  warp.c[1] = c.y;
  warp.c[2] = c.z;
  return warp;
}

struct BilinearTaps {
  int32_t idx[4];
  double w[4];
  int count = 0;
};

// Taps for a source-image lookup at continuous (u, v); empty when the
// position lacks full bilinear support or sits behind the camera.
inline bool bilinear_taps(double u, double v, int w, int h, BilinearTaps* taps) {
  if (!(u >= 0.0) || !(v >= 0.0) || u > w - 1 || v > h - 1) return false;
  int x0 = static_cast<int>(u);
  int y0 = static_cast<int>(v);
  if (x0 > w - 2) x0 = w - 2;
  if (y0 > h - 2) y0 = h - 2;
  const double fu = u - x0;
  const double fv = v - y0;
  const double w00 = (1 - fu) * (1 - fv), w01 = fu * (1 - fv);
  const double w10 = (1 - fu) * fv, w11 = fu * fv;
  taps->count = 0;
  auto push = [&](int x, int y, double wt) {
    taps->idx[taps->count] = y * w + x;
    taps->w[taps->count] = wt;
    ++taps->count;
  };
  push(x0, y0, w00);
  push(x0 + 1, y0, w01);
  push(x0, y0 + 1, w10);
  push(x0 + 1, y0 + 1, w11);
  return true;
}

}  // namespace

// Masked across-view moments of plane-swept features. Output row
// (y*W + x)*L + l holds [mean(d); var(d)] over the ref view's own feature
// plus every in-frame warped source feature. Warps are recomputed in the
// backward pass instead of being materialized.
template <class T>
static ad::Var cost_volume_moments(ad::Graph<T>& g, const std::vector<ad::Var>& f_images,
                                   int ref, const std::vector<CameraView>& cams,
                                   const std::vector<double>& planes) {
  const int K = static_cast<int>(f_images.size());
  const CameraView& rc = cams[static_cast<size_t>(ref)];
  const int w = rc.width, h = rc.height;
  const int L = static_cast<int>(planes.size());
  const int64_t d = g.val(f_images[0]).shape.back();
  const int64_t cells = int64_t(h) * w * L;

  // Warp matrices per (source view, plane).
  std::vector<PlaneWarp> warps(static_cast<size_t>(K) * L);
  for (int j = 0; j < K; ++j)
    for (int l = 0; l < L; ++l)
      if (j != ref)
        warps[static_cast<size_t>(j) * L + l] =
            make_plane_warp(rc, cams[static_cast<size_t>(j)], planes[static_cast<size_t>(l)]);

  std::vector<const Tensor<T>*> feats(static_cast<size_t>(K));
  for (int j = 0; j < K; ++j) feats[static_cast<size_t>(j)] = &g.val(f_images[j]);

  Tensor<T> out({cells, 2 * d});

  auto forward_cell = [&](int64_t cell, T* dst) {
    const int l = static_cast<int>(cell % L);
    const int64_t p = cell / L;
    const int px = static_cast<int>(p % w);
    const int py = static_cast<int>(p / w);
    T lsum[64], lsumsq[64], lwarp[64];
    for (int64_t c = 0; c < d; ++c) {
      lsum[c] = T(0);
      lsumsq[c] = T(0);
    }
    int count = 0;
    for (int j = 0; j < K; ++j) {
      const T* f = feats[static_cast<size_t>(j)]->ptr();
      if (j == ref) {
        const T* row = f + (int64_t(py) * w + px) * d;
        for (int64_t c = 0; c < d; ++c) {
          lsum[c] += row[c];
          lsumsq[c] += row[c] * row[c];
        }
        ++count;
        continue;
      }
      const PlaneWarp& wp = warps[static_cast<size_t>(j) * L + l];
      double x, y, z;
      wp.apply(px, py, &x, &y, &z);
      if (z <= 0) continue;
      const CameraView& sc = cams[static_cast<size_t>(j)];
      BilinearTaps taps;
      if (!bilinear_taps(sc.cx + sc.fx * x / z, sc.cy + sc.fy * y / z, sc.width, sc.height,
                         &taps))
        continue;
      for (int64_t c = 0; c < d; ++c) lwarp[c] = T(0);
      for (int t = 0; t < taps.count; ++t) {
        const T* row = f + int64_t(taps.idx[t]) * d;
        const T wt = static_cast<T>(taps.w[t]);
        for (int64_t c = 0; c < d; ++c) lwarp[c] += wt * row[c];
      }
      for (int64_t c = 0; c < d; ++c) {
        lsum[c] += lwarp[c];
        lsumsq[c] += lwarp[c] * lwarp[c];
      }
      ++count;
    }
    const T inv = T(1) / static_cast<T>(count);
    for (int64_t c = 0; c < d; ++c) {
      const T mean = lsum[c] * inv;
      dst[c] = mean;
      dst[d + c] = lsumsq[c] * inv - mean * mean;
    }
  };

  if (d > 64) throw std::invalid_argument("cost volume supports d <= 64");
  parallel_for(cells, [&](int64_t b, int64_t e, int) {
    for (int64_t cell = b; cell < e; ++cell) forward_cell(cell, out.ptr() + cell * 2 * d);
  });

  const ad::Var o{static_cast<int32_t>(g.num_nodes())};
  std::vector<ad::Var> parents = f_images;
  return g.custom(std::move(out), parents,
                  [&g, f_images, ref, cams, planes, warps = std::move(warps), o, w, h, L, d,
                   K]() {
    const Tensor<T>& go = g.grad(o);
    const Tensor<T>& val = g.val(o);
    std::vector<const Tensor<T>*> feats2(static_cast<size_t>(K));
    std::vector<Tensor<T>*> grads(static_cast<size_t>(K), nullptr);
    for (int j = 0; j < K; ++j) {
      feats2[static_cast<size_t>(j)] = &g.val(f_images[j]);
      if (g.need_grad(f_images[j])) grads[static_cast<size_t>(j)] = &g.grad_accum(f_images[j]);
    }
    const int64_t cells = int64_t(h) * w * L;
    std::vector<T> chain(static_cast<size_t>(d));
    std::vector<T> warped(static_cast<size_t>(d));
    for (int64_t cell = 0; cell < cells; ++cell) {
      const int l = static_cast<int>(cell % L);
      const int64_t p = cell / L;
      const int px = static_cast<int>(p % w);
      const int py = static_cast<int>(p / w);
      const T* gm = go.ptr() + cell * 2 * d;      // d(mean), then d(var)
      const T* mean = val.ptr() + cell * 2 * d;   // stored means
      // Count contributors (same walk as forward).
      int count = 1;
      for (int j = 0; j < K; ++j) {
        if (j == ref) continue;
        const PlaneWarp& wp = warps[static_cast<size_t>(j) * L + l];
        double x, y, z;
        wp.apply(px, py, &x, &y, &z);
        if (z <= 0) continue;
        const CameraView& sc = cams[static_cast<size_t>(j)];
        BilinearTaps taps;
        if (bilinear_taps(sc.cx + sc.fx * x / z, sc.cy + sc.fy * y / z, sc.width, sc.height,
                          &taps))
          ++count;
      }
      const T inv = T(1) / static_cast<T>(count);
      for (int j = 0; j < K; ++j) {
        Tensor<T>* gj = grads[static_cast<size_t>(j)];
        if (!gj) continue;
        const T* f = feats2[static_cast<size_t>(j)]->ptr();
        if (j == ref) {
          const int64_t row = int64_t(py) * w + px;
          T* dst = gj->ptr() + row * d;
          const T* src = f + row * d;
          for (int64_t c = 0; c < d; ++c)
            dst[c] += inv * (gm[c] + gm[d + c] * T(2) * (src[c] - mean[c]));
          continue;
        }
        const PlaneWarp& wp = warps[static_cast<size_t>(j) * L + l];
        double x, y, z;
        wp.apply(px, py, &x, &y, &z);
        if (z <= 0) continue;
        const CameraView& sc = cams[static_cast<size_t>(j)];
        BilinearTaps taps;
        if (!bilinear_taps(sc.cx + sc.fx * x / z, sc.cy + sc.fy * y / z, sc.width, sc.height,
                           &taps))
          continue;
        for (int64_t c = 0; c < d; ++c) warped[static_cast<size_t>(c)] = T(0);
        for (int t = 0; t < taps.count; ++t) {
          const T* row = f + int64_t(taps.idx[t]) * d;
          const T wt = static_cast<T>(taps.w[t]);
          for (int64_t c = 0; c < d; ++c) warped[static_cast<size_t>(c)] += wt * row[c];
        }
        for (int64_t c = 0; c < d; ++c)
          chain[static_cast<size_t>(c)] =
              inv * (gm[c] + gm[d + c] * T(2) * (warped[static_cast<size_t>(c)] - mean[c]));
        for (int t = 0; t < taps.count; ++t) {
          T* dst = gj->ptr() + int64_t(taps.idx[t]) * d;
          const T wt = static_cast<T>(taps.w[t]);
          for (int64_t c = 0; c < d; ++c) dst[c] += wt * chain[static_cast<size_t>(c)];
        }
      }
    }
  });
}

template <class T>
ad::Var predict_depth(ad::Graph<T>& g, ad::Var prob, const std::vector<double>& planes) {
  const int64_t L = static_cast<int64_t>(planes.size());
  const int64_t hw = g.val(prob).numel() / L;
  Tensor<T> pl({L});
  for (int64_t l = 0; l < L; ++l) pl[l] = static_cast<T>(planes[static_cast<size_t>(l)]);
  return g.sum_mid(g.mul_cols(prob, pl), hw, L, 1);
}

template <class T>
VolumeOut<T> build_cost_volume(ad::Graph<T>& g, ad::GraphParams<T>& params,
                               const std::vector<ad::Var>& f_images, int ref,
                               const std::vector<CameraView>& cams, int L) {
  if (f_images.size() < 2) throw std::invalid_argument("build_cost_volume: need K >= 2 views");
  if (f_images.size() != cams.size())
    throw std::invalid_argument("build_cost_volume: view/camera count mismatch");
  const CameraView& rc = cams[static_cast<size_t>(ref)];
  VolumeOut<T> out;
  out.planes = plane_depths(rc.near, rc.far, L);
  ad::Var mom = cost_volume_moments(g, f_images, ref, cams, out.planes);
  out.values = g.tanh(g.add_rowvec(g.matmul(mom, params("cv.fuse_w")), params("cv.fuse_b")));
  ad::Var score = g.add_rowvec(g.matmul(out.values, params("cv.score_w")), params("cv.score_b"));
  const int64_t hw = int64_t(rc.height) * rc.width;
  out.prob = g.softmax_rows(g.reshape(score, {hw, int64_t(L)}));
  out.depth = predict_depth(g, out.prob, out.planes);
  return out;
}

std::shared_ptr<ad::GatherTable> volume_gather_table(const std::vector<Vec3>& points,
                                                     const CameraView& cam, int L,
                                                     std::vector<uint8_t>* out_flags) {
  auto table = std::make_shared<ad::GatherTable>();
  table->rows = static_cast<int64_t>(points.size());
  table->taps = 8;
  table->idx.assign(points.size() * 8, -1);
  table->w.assign(points.size() * 8, 0.0);
  if (out_flags) out_flags->assign(points.size(), 0);
  for (size_t r = 0; r < points.size(); ++r) {
    const geom::Projection pr = geom::project(points[r], cam);
    bool ok = pr.depth > 0;
    BilinearTaps taps;
    double lc = 0;
    if (ok) ok = bilinear_taps(pr.u, pr.v, cam.width, cam.height, &taps);
    if (ok) {
      lc = plane_coord(pr.depth, cam.near, cam.far, L);
      ok = lc >= 0.0 && lc <= L - 1;
    }
    if (!ok) {
      if (out_flags) (*out_flags)[r] = 1;
      continue;
    }
    int l0 = static_cast<int>(lc);
    if (l0 > L - 2) l0 = L - 2;
    const double fl = lc - l0;
    for (int t = 0; t < 4; ++t) {
      table->idx[r * 8 + t] = taps.idx[t] * L + l0;
      table->w[r * 8 + t] = taps.w[t] * (1.0 - fl);
      table->idx[r * 8 + 4 + t] = taps.idx[t] * L + l0 + 1;
      table->w[r * 8 + 4 + t] = taps.w[t] * fl;
    }
  }
  return table;
}

std::shared_ptr<ad::GatherTable> image_gather_table(const std::vector<Vec3>& points,
                                                    const CameraView& cam,
                                                    std::vector<uint8_t>* out_flags) {
  auto table = std::make_shared<ad::GatherTable>();
  table->rows = static_cast<int64_t>(points.size());
  table->taps = 4;
  table->idx.assign(points.size() * 4, -1);
  table->w.assign(points.size() * 4, 0.0);
  if (out_flags) out_flags->assign(points.size(), 0);
  for (size_t r = 0; r < points.size(); ++r) {
    const geom::Projection pr = geom::project(points[r], cam);
    BilinearTaps taps;
    if (pr.depth <= 0 || !bilinear_taps(pr.u, pr.v, cam.width, cam.height, &taps)) {
      if (out_flags) (*out_flags)[r] = 1;
      continue;
    }
    for (int t = 0; t < 4; ++t) {
      table->idx[r * 4 + t] = taps.idx[t];
      table->w[r * 4 + t] = taps.w[t];
    }
  }
  return table;
}

template void init_params<float>(ParamStore<float>&, const ReasonerConfig&, Rng&);
template void init_params<double>(ParamStore<double>&, const ReasonerConfig&, Rng&);
template ad::Var encode<float>(ad::Graph<float>&, ad::GraphParams<float>&, ad::Var, int, int);
template ad::Var encode<double>(ad::Graph<double>&, ad::GraphParams<double>&, ad::Var, int, int);
template ad::Var decode_semantic<float>(ad::Graph<float>&, ad::GraphParams<float>&, ad::Var, int, int);
template ad::Var decode_semantic<double>(ad::Graph<double>&, ad::GraphParams<double>&, ad::Var, int, int);
template VolumeOut<float> build_cost_volume<float>(ad::Graph<float>&, ad::GraphParams<float>&,
                                                   const std::vector<ad::Var>&, int,
                                                   const std::vector<CameraView>&, int);
template VolumeOut<double> build_cost_volume<double>(ad::Graph<double>&, ad::GraphParams<double>&,
                                                     const std::vector<ad::Var>&, int,
                                                     const std::vector<CameraView>&, int);
template ad::Var predict_depth<float>(ad::Graph<float>&, ad::Var, const std::vector<double>&);
template ad::Var predict_depth<double>(ad::Graph<double>&, ad::Var, const std::vector<double>&);

}  // namespace gsnerf::reasoner
