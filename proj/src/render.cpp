// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#include "gsnerf/render.hpp"

#include <cmath>
#include <stdexcept>

#include "gsnerf/reasoner.hpp"

namespace gsnerf::render {

int pe_dim(int octaves) { return 3 * (1 + 2 * octaves); }

void positional_encode(const Vec3& p, int octaves, double* out) {
  out[0] = p.x;
  out[1] = p.y;
  out[2] = p.z;
  int i = 3;
  double f = 1.0;
  for (int o = 0; o < octaves; ++o) {
    for (int c = 0; c < 3; ++c) {
      out[i++] = std::sin(f * p[c]);
      out[i++] = std::cos(f * p[c]);
    }
    f *= 2.0;
  }
}

namespace {

template <class T>
Tensor<T> glorot(Rng& rng, std::vector<int64_t> shape) {
  Tensor<T> t(shape);
  const double s = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-s, s));
  return t;
}

}  // namespace

template <class T>
void init_params(ParamStore<T>& store, const RenderConfig& cfg, Rng& rng) {
  const int64_t d = cfg.d, h = cfg.hidden, pe = pe_dim(cfg.pe_octaves);
  store.add("vr.row_w", glorot<T>(rng, {2 * d, h}));
  store.add("vr.row_b", Tensor<T>({h}));
  store.add("vr.glob_w", glorot<T>(rng, {4 * d, h}));
  store.add("vr.glob_b", Tensor<T>({h}));
  store.add("vr.trunk_w", glorot<T>(rng, {2 * h + pe, h}));
  store.add("vr.trunk_b", Tensor<T>({h}));
  store.add("vr.sigma_w", glorot<T>(rng, {h, 1}));
  store.add("vr.sigma_b", Tensor<T>({1}));
  store.add("vr.color_trunk_w", glorot<T>(rng, {h + pe, h}));
  store.add("vr.color_trunk_b", Tensor<T>({h}));
  store.add("vr.color_w", glorot<T>(rng, {h, 3}));
  store.add("vr.color_b", Tensor<T>({3}));
  store.add("sr.row_w", glorot<T>(rng, {d, h}));
  store.add("sr.row_b", Tensor<T>({h}));
  store.add("sr.glob_w", glorot<T>(rng, {2 * d, h}));
  store.add("sr.glob_b", Tensor<T>({h}));
  store.add("sr.trunk_w", glorot<T>(rng, {2 * h + pe, h}));
  store.add("sr.trunk_b", Tensor<T>({h}));
  store.add("sr.logit_w", glorot<T>(rng, {h, int64_t(cfg.num_classes)}));
  store.add("sr.logit_b", Tensor<T>({int64_t(cfg.num_classes)}));
}

namespace {

// Core batch builder over flat point/direction lists.
template <class T>
PointBatch<T> build_batch(const std::vector<Vec3>& points, const std::vector<Vec3>& dirs_per_row,
                          int R, int N, const std::vector<CameraView>& cams,
                          const std::vector<const double*>& view_depths, int L,
                          const RenderConfig& cfg, const Tensor<T>& delta, bool with_volume) {
  const int K = static_cast<int>(cams.size());
  const int64_t rows = static_cast<int64_t>(points.size());
  PointBatch<T> batch;
  batch.rows = rows;
  batch.R = R;
  batch.N = N;
  batch.K = K;
  batch.delta = delta;
  batch.fallback.assign(static_cast<size_t>(rows), 0);

  std::vector<double> counts(static_cast<size_t>(rows), 0.0);
  for (int k = 0; k < K; ++k) {
    const CameraView& cam = cams[static_cast<size_t>(k)];
    std::vector<uint8_t> img_out, vol_out;
    batch.img_tables.push_back(reasoner::image_gather_table(points, cam, &img_out));
    if (with_volume)
      batch.vol_tables.push_back(reasoner::volume_gather_table(points, cam, L, &vol_out));
    const double eps_occ = cfg.eps_occ_frac * (cam.far - cam.near);
    Tensor<T> mask({rows});
    for (int64_t r = 0; r < rows; ++r) {
      bool visible = img_out[static_cast<size_t>(r)] == 0;
      if (visible && with_volume) visible = vol_out[static_cast<size_t>(r)] == 0;
      if (visible) {
        const geom::Projection pr = geom::project(points[static_cast<size_t>(r)], cam);
        const double dk = geom::bilinear_sample(view_depths[static_cast<size_t>(k)], cam.width,
                                                cam.height, pr.u, pr.v);
        visible = pr.depth <= dk + eps_occ;
      }
      mask[r] = visible ? T(1) : T(0);
      counts[static_cast<size_t>(r)] += visible ? 1.0 : 0.0;
    }
    batch.view_mask.push_back(std::move(mask));
  }

  batch.recip_count = Tensor<T>({rows});
  for (int64_t r = 0; r < rows; ++r) {
    if (counts[static_cast<size_t>(r)] == 0.0) {
      // Everything occluded: fall back to the unmasked mean over all views.
      batch.fallback[static_cast<size_t>(r)] = 1;
      for (int k = 0; k < K; ++k) batch.view_mask[static_cast<size_t>(k)][r] = T(1);
      batch.recip_count[r] = T(1) / static_cast<T>(K);
    } else {
      batch.recip_count[r] = T(1) / static_cast<T>(counts[static_cast<size_t>(r)]);
    }
  }

  const int pe = pe_dim(cfg.pe_octaves);
  batch.pe_x = Tensor<T>({rows, int64_t(pe)});
  batch.pe_phi = Tensor<T>({rows, int64_t(pe)});
  std::vector<double> buf(static_cast<size_t>(pe));
  for (int64_t r = 0; r < rows; ++r) {
    positional_encode(points[static_cast<size_t>(r)], cfg.pe_octaves, buf.data());
    for (int i = 0; i < pe; ++i) batch.pe_x[r * pe + i] = static_cast<T>(buf[static_cast<size_t>(i)]);
    positional_encode(dirs_per_row[static_cast<size_t>(r)], cfg.pe_octaves, buf.data());
    for (int i = 0; i < pe; ++i)
      batch.pe_phi[r * pe + i] = static_cast<T>(buf[static_cast<size_t>(i)]);
  }
  return batch;
}

}  // namespace

template <class T>
PointBatch<T> make_point_batch(const std::vector<Ray>& rays,
                               const std::vector<sampling::SampleSet>& samples,
                               const std::vector<CameraView>& cams,
                               const std::vector<const double*>& view_depths, int L,
                               const RenderConfig& cfg) {
  if (rays.size() != samples.size())
    throw std::invalid_argument("make_point_batch: ray/sample count mismatch");
  const int R = static_cast<int>(rays.size());
  const int N = R > 0 ? static_cast<int>(samples[0].ts.size()) : 0;
  std::vector<Vec3> points;
  std::vector<Vec3> dirs;
  points.reserve(static_cast<size_t>(R) * N);
  dirs.reserve(points.capacity());
  Tensor<T> delta({int64_t(R), int64_t(N)});
  for (int r = 0; r < R; ++r) {
    const auto& ts = samples[static_cast<size_t>(r)].ts;
    if (static_cast<int>(ts.size()) != N)
      throw std::invalid_argument("make_point_batch: ragged sample counts");
    for (int n = 0; n < N; ++n) {
      points.push_back(rays[static_cast<size_t>(r)].origin +
                       rays[static_cast<size_t>(r)].dir * ts[static_cast<size_t>(n)]);
      dirs.push_back(rays[static_cast<size_t>(r)].dir);
      const double next = n + 1 < N ? ts[static_cast<size_t>(n) + 1]
                                    : rays[static_cast<size_t>(r)].far;
      delta[int64_t(r) * N + n] = static_cast<T>(next - ts[static_cast<size_t>(n)]);
    }
  }
  return build_batch<T>(points, dirs, R, N, cams, view_depths, L, cfg, delta, true);
}

template <class T>
PointBatch<T> make_surface_batch(const std::vector<Ray>& rays, const std::vector<double>& zs,
                                 const std::vector<CameraView>& cams,
                                 const std::vector<const double*>& view_depths,
                                 const RenderConfig& cfg) {
  if (rays.size() != zs.size())
    throw std::invalid_argument("make_surface_batch: ray/z count mismatch");
  const int R = static_cast<int>(rays.size());
  std::vector<Vec3> points;
  std::vector<Vec3> dirs;
  points.reserve(rays.size());
  for (int r = 0; r < R; ++r) {
    points.push_back(rays[static_cast<size_t>(r)].origin +
                     rays[static_cast<size_t>(r)].dir * zs[static_cast<size_t>(r)]);
    dirs.push_back(rays[static_cast<size_t>(r)].dir);
  }
  Tensor<T> delta({int64_t(R), 1});
  delta.fill(T(1));
  return build_batch<T>(points, dirs, R, 1, cams, view_depths, 0, cfg, delta, false);
}

template <class T>
CompositeOut<T> composite(ad::Graph<T>& g, ad::Var sigma_rows1, ad::Var color_rows3,
                          const Tensor<T>& delta) {
  const int64_t r = delta.shape[0];
  const int64_t n = delta.shape[1];
  ad::Var sigma = g.reshape(sigma_rows1, {r, n});
  ad::Var sd = g.mul_const(sigma, delta);
  ad::Var excl = g.exclusive_cumsum_rows(sd);
  ad::Var trans = g.exp(g.neg(excl));                       // T_n
  ad::Var alpha = g.rsub_scalar(T(1), g.exp(g.neg(sd)));    // 1 - exp(-sigma*delta)
  CompositeOut<T> out;
  out.weights = g.mul(trans, alpha);
  ad::Var wflat = g.reshape(out.weights, {r * n});
  out.rgb = g.sum_mid(g.mul_rows(color_rows3, wflat), r, n, 3);
  out.t_residual = g.exp(g.neg(g.sum_mid(sd, r, n, 1)));    // T_{N+1}
  return out;
}

RayComposite composite_ray(const std::vector<double>& ts, const std::vector<double>& sigmas,
                           const std::vector<Vec3>& colors, double far) {
  const size_t n = ts.size();
  if (sigmas.size() != n || colors.size() != n)
    throw std::invalid_argument("composite_ray: length mismatch");
  for (size_t i = 0; i + 1 < n; ++i)
    if (ts[i] > ts[i + 1]) throw std::invalid_argument("composite_ray: ts must be sorted");
  RayComposite out;
  out.weights.resize(n);
  double acc = 0.0;  // sum of sigma*delta so far
  Vec3 rgb{0, 0, 0};
  for (size_t i = 0; i < n; ++i) {
    const double delta = (i + 1 < n ? ts[i + 1] : far) - ts[i];
    const double trans = std::exp(-acc);
    const double alpha = 1.0 - std::exp(-sigmas[i] * delta);
    out.weights[i] = trans * alpha;
    rgb = rgb + colors[i] * out.weights[i];
    acc += sigmas[i] * delta;
  }
  out.rgb = rgb;
  out.t_residual = std::exp(-acc);
  return out;
}

namespace {

// Shared masked-moment + per-view MLP trunk used by both renderers.
template <class T>
struct PooledFeatures {
  ad::Var global;  // [rows, 2*rowdim]
  ad::Var pooled;  // [rows, h]
};

template <class T>
PooledFeatures<T> pool_rows(ad::Graph<T>& g, ad::GraphParams<T>& params,
                            const PointBatch<T>& batch, const std::vector<ad::Var>& rows,
                            const char* row_w, const char* row_b, const char* glob_w,
                            const char* glob_b) {
  const int K = batch.K;
  ad::Var recip = g.constant(batch.recip_count);
  std::vector<ad::Var> masked(static_cast<size_t>(K));
  std::vector<ad::Var> mask_vars(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    mask_vars[static_cast<size_t>(k)] = g.constant(batch.view_mask[static_cast<size_t>(k)]);
    masked[static_cast<size_t>(k)] = g.mul_rows(rows[static_cast<size_t>(k)],
                                                mask_vars[static_cast<size_t>(k)]);
  }
  ad::Var sum = masked[0];
  for (int k = 1; k < K; ++k) sum = g.add(sum, masked[static_cast<size_t>(k)]);
  ad::Var mean = g.mul_rows(sum, recip);
  ad::Var sumsq = g.mul(masked[0], masked[0]);
  for (int k = 1; k < K; ++k)
    sumsq = g.add(sumsq, g.mul(masked[static_cast<size_t>(k)], masked[static_cast<size_t>(k)]));
  ad::Var var = g.sub(g.mul_rows(sumsq, recip), g.mul(mean, mean));
  PooledFeatures<T> out;
  out.global = g.concat_cols({mean, var});

  ad::Var pooled;
  for (int k = 0; k < K; ++k) {
    ad::Var y = g.tanh(g.add_rowvec(g.matmul(masked[static_cast<size_t>(k)], params(row_w)),
                                    params(row_b)));
    y = g.mul_rows(y, mask_vars[static_cast<size_t>(k)]);
    pooled = k == 0 ? y : g.add(pooled, y);
  }
  out.pooled = g.mul_rows(pooled, recip);
  ad::Var y0 = g.tanh(g.add_rowvec(g.matmul(out.global, params(glob_w)), params(glob_b)));
  out.pooled = g.concat_cols({out.pooled, y0});
  return out;
}

}  // namespace

template <class T>
VolumeRenderOut<T> volume_render(ad::Graph<T>& g, ad::GraphParams<T>& params,
                                 const PointBatch<T>& batch,
                                 const std::vector<ad::Var>& f_images,
                                 const std::vector<ad::Var>& f_volumes,
                                 const RenderConfig& cfg) {
  (void)cfg;
  const int K = batch.K;
  std::vector<ad::Var> rows(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    ad::Var fi = g.gather(f_images[static_cast<size_t>(k)],
                          batch.img_tables[static_cast<size_t>(k)]);
    ad::Var fv = g.gather(f_volumes[static_cast<size_t>(k)],
                          batch.vol_tables[static_cast<size_t>(k)]);
    rows[static_cast<size_t>(k)] = g.concat_cols({fi, fv});
  }
  PooledFeatures<T> pooled =
      pool_rows(g, params, batch, rows, "vr.row_w", "vr.row_b", "vr.glob_w", "vr.glob_b");

  ad::Var trunk_in = g.concat_cols({pooled.pooled, g.constant(batch.pe_x)});
  ad::Var u = g.tanh(g.add_rowvec(g.matmul(trunk_in, params("vr.trunk_w")), params("vr.trunk_b")));
  VolumeRenderOut<T> out;
  out.global = pooled.global;
  out.sigma = g.softplus(g.add_rowvec(g.matmul(u, params("vr.sigma_w")), params("vr.sigma_b")));
  ad::Var cin = g.concat_cols({u, g.constant(batch.pe_phi)});
  ad::Var v = g.tanh(
      g.add_rowvec(g.matmul(cin, params("vr.color_trunk_w")), params("vr.color_trunk_b")));
  out.color = g.sigmoid(g.add_rowvec(g.matmul(v, params("vr.color_w")), params("vr.color_b")));
  CompositeOut<T> comp = composite(g, out.sigma, out.color, batch.delta);
  out.rgb = comp.rgb;
  out.t_residual = comp.t_residual;
  out.weights = comp.weights;
  return out;
}

template <class T>
SemanticRenderOut<T> semantic_render(ad::Graph<T>& g, ad::GraphParams<T>& params,
                                     const PointBatch<T>& batch,
                                     const std::vector<ad::Var>& f_sems,
                                     const RenderConfig& cfg) {
  (void)cfg;
  const int K = batch.K;
  std::vector<ad::Var> rows(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k)
    rows[static_cast<size_t>(k)] =
        g.gather(f_sems[static_cast<size_t>(k)], batch.img_tables[static_cast<size_t>(k)]);
  PooledFeatures<T> pooled =
      pool_rows(g, params, batch, rows, "sr.row_w", "sr.row_b", "sr.glob_w", "sr.glob_b");
  ad::Var trunk_in = g.concat_cols({pooled.pooled, g.constant(batch.pe_x)});
  ad::Var u = g.tanh(g.add_rowvec(g.matmul(trunk_in, params("sr.trunk_w")), params("sr.trunk_b")));
  SemanticRenderOut<T> out;
  out.global = pooled.global;
  out.logits = g.add_rowvec(g.matmul(u, params("sr.logit_w")), params("sr.logit_b"));
  return out;
}

template void init_params<float>(ParamStore<float>&, const RenderConfig&, Rng&);
template void init_params<double>(ParamStore<double>&, const RenderConfig&, Rng&);
template PointBatch<float> make_point_batch<float>(
    const std::vector<Ray>&, const std::vector<sampling::SampleSet>&,
    const std::vector<CameraView>&, const std::vector<const double*>&, int, const RenderConfig&);
template PointBatch<double> make_point_batch<double>(
    const std::vector<Ray>&, const std::vector<sampling::SampleSet>&,
    const std::vector<CameraView>&, const std::vector<const double*>&, int, const RenderConfig&);
template PointBatch<float> make_surface_batch<float>(
    const std::vector<Ray>&, const std::vector<double>&, const std::vector<CameraView>&,
    const std::vector<const double*>&, const RenderConfig&);
template PointBatch<double> make_surface_batch<double>(
    const std::vector<Ray>&, const std::vector<double>&, const std::vector<CameraView>&,
    const std::vector<const double*>&, const RenderConfig&);
template VolumeRenderOut<float> volume_render<float>(
    ad::Graph<float>&, ad::GraphParams<float>&, const PointBatch<float>&,
    const std::vector<ad::Var>&, const std::vector<ad::Var>&, const RenderConfig&);
template VolumeRenderOut<double> volume_render<double>(
    ad::Graph<double>&, ad::GraphParams<double>&, const PointBatch<double>&,
    const std::vector<ad::Var>&, const std::vector<ad::Var>&, const RenderConfig&);
template SemanticRenderOut<float> semantic_render<float>(
    ad::Graph<float>&, ad::GraphParams<float>&, const PointBatch<float>&,
    const std::vector<ad::Var>&, const RenderConfig&);
template SemanticRenderOut<double> semantic_render<double>(
    ad::Graph<double>&, ad::GraphParams<double>&, const PointBatch<double>&,
    const std::vector<ad::Var>&, const RenderConfig&);
template CompositeOut<float> composite<float>(ad::Graph<float>&, ad::Var, ad::Var,
                                              const Tensor<float>&);
template CompositeOut<double> composite<double>(ad::Graph<double>&, ad::Var, ad::Var,
                                                const Tensor<double>&);

}  // namespace gsnerf::render
