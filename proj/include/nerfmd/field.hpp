#pragma once

#include <algorithm>
#include <vector>

#include "nerfmd/geometry.hpp"
#include "nerfmd/mlp.hpp"
#include "nerfmd/rng.hpp"

namespace nerfmd {

// Sentinel length of the last ray segment.
constexpr double kLastDelta = 1e10;

template <class T>
struct RaySamples {
  std::vector<T> t;  // strictly increasing, within [near, far]
};

template <class T>
struct RayRenderResult {
  Eigen::Matrix<T, 3, 1> color = Eigen::Matrix<T, 3, 1>::Zero();
  T depth = T(0);           // clamped to [near, far]
  T depth_raw = T(0);       // expected absorption position, unclamped
  T depth_variance = T(0);
  T transmittance_tail = T(1);
  std::vector<T> weights;
};

// One uniform sample per stratum of [near, far).
template <class T>
RaySamples<T> sample_stratified(T near, T far, int count, Rng& rng) {
  RaySamples<T> s;
  s.t.resize(count);
  T span = (far - near) / T(count);
  for (int k = 0; k < count; ++k)
    s.t[k] = near + span * (T(k) + T(rng.uniform()));
  return s;
}

// Deterministic stratum midpoints, used for evaluation renders.
template <class T>
RaySamples<T> sample_uniform(T near, T far, int count) {
  RaySamples<T> s;
  s.t.resize(count);
  T span = (far - near) / T(count);
  for (int k = 0; k < count; ++k) s.t[k] = near + span * (T(k) + T(0.5));
  return s;
}

// Inverse-CDF sampling proportional to the coarse weights (plus a uniform
// floor), merged and sorted with the coarse t-values. All-zero weights fall
// back to plain stratified sampling.
template <class T>
RaySamples<T> sample_hierarchical(const RaySamples<T>& coarse,
                                  const std::vector<T>& weights, int n_fine,
                                  Rng& rng, T floor_weight = T(1e-3)) {
  const int K = int(coarse.t.size());
  T total = T(0);
  for (T w : weights) total += w;
  RaySamples<T> out;
  if (!(total > T(0))) {
    out = sample_stratified(coarse.t.front(), coarse.t.back(), n_fine, rng);
    return out;
  }

  // Piecewise-constant pdf over the K-1 inter-sample bins; bin k carries the
  // weight of its left sample.
  std::vector<T> mass(K - 1);
  T cum = T(0);
  for (int k = 0; k + 1 < K; ++k) {
    mass[k] = weights[k] + floor_weight * total;
    cum += mass[k];
  }
  std::vector<T> cdf(K);
  cdf[0] = T(0);
  for (int k = 0; k + 1 < K; ++k) cdf[k + 1] = cdf[k] + mass[k] / cum;
  cdf[K - 1] = T(1);

  out.t = coarse.t;
  out.t.reserve(K + n_fine);
  for (int i = 0; i < n_fine; ++i) {
    T u = (T(i) + T(rng.uniform())) / T(n_fine);
    auto it = std::upper_bound(cdf.begin(), cdf.end() - 1, u);
    int bin = std::max(0, int(it - cdf.begin()) - 1);
    T frac = (u - cdf[bin]) / std::max(cdf[bin + 1] - cdf[bin], T(1e-12));
    out.t.push_back(coarse.t[bin] + frac * (coarse.t[bin + 1] - coarse.t[bin]));
  }
  std::sort(out.t.begin(), out.t.end());
  return out;
}

// Discrete volume rendering quadrature: C = sum T_k alpha_k c_k with
// alpha_k = 1 - exp(-sigma_k delta_k), plus expected depth and its variance.
template <class T>
RayRenderResult<T> composite_ray(const std::vector<T>& ts, const T* sigma,
                                 const Eigen::Matrix<T, Eigen::Dynamic, 3>& rgb,
                                 ptrdiff_t row0, T near, T far,
                                 const Eigen::Matrix<T, 3, 1>& background) {
  const int K = int(ts.size());
  RayRenderResult<T> out;
  out.weights.resize(K);
  T trans = T(1);
  for (int k = 0; k < K; ++k) {
    T delta = (k + 1 < K) ? ts[k + 1] - ts[k] : T(kLastDelta);
    T alpha = T(1) - std::exp(-sigma[k] * delta);
    T w = trans * alpha;
    out.weights[k] = w;
    out.color += w * rgb.row(row0 + k).transpose();
    out.depth_raw += w * ts[k];
    trans *= T(1) - alpha;
  }
  out.transmittance_tail = trans;
  out.color += trans * background;
  for (int k = 0; k < K; ++k) {
    T d = ts[k] - out.depth_raw;
    out.depth_variance += out.weights[k] * d * d;
  }
  out.depth = std::clamp(out.depth_raw, near, far);
  if (!out.color.allFinite())
    throw std::runtime_error("render_ray produced a non-finite color");
  return out;
}

// Backward pass of composite_ray for gradients w.r.t. color, raw depth and
// depth variance. Writes per-sample gradients of sigma and rgb.
template <class T>
void composite_backward(const std::vector<T>& ts,
                        const RayRenderResult<T>& res,
                        const Eigen::Matrix<T, Eigen::Dynamic, 3>& rgb,
                        ptrdiff_t row0,
                        const Eigen::Matrix<T, 3, 1>& dcolor, T ddepth,
                        const Eigen::Matrix<T, 3, 1>& background,
                        T* dsigma, Eigen::Matrix<T, Eigen::Dynamic, 3>& drgb,
                        T dvar = T(0)) {
  const int K = int(ts.size());
  // dV/dw_j = (t_j - D)^2 - 2 t_j sum_k w_k (t_k - D), the second term being
  // the coupling through D itself
  T wtd = T(0);
  if (dvar != T(0))
    for (int k = 0; k < K; ++k)
      wtd += res.weights[k] * (ts[k] - res.depth_raw);
  // g_k = dL/dw_k
  std::vector<T> g(K);
  for (int k = 0; k < K; ++k) {
    g[k] = dcolor.dot(rgb.row(row0 + k).transpose()) + ddepth * ts[k];
    if (dvar != T(0)) {
      T d = ts[k] - res.depth_raw;
      g[k] += dvar * (d * d - T(2) * ts[k] * wtd);
    }
    drgb.row(row0 + k) = res.weights[k] * dcolor.transpose();
  }
  T g_tail = dcolor.dot(background);
  // dL/dsigma_k = delta_k (T_{k+1} g_k - sum_{m>k} w_m g_m - tail g_tail)
  T suffix = res.transmittance_tail * g_tail;
  T trans_after = res.transmittance_tail;  // T_{K+1}
  for (int k = K - 1; k >= 0; --k) {
    T delta = (k + 1 < K) ? ts[k + 1] - ts[k] : T(kLastDelta);
    // T_{k+1} = T_k (1 - alpha_k); recover it from running transmittance
    dsigma[k] = delta * (trans_after * g[k] - suffix);
    suffix += res.weights[k] * g[k];
    trans_after += res.weights[k];  // T_k = T_{k+1} + w_k
  }
}

struct RenderConfig {
  double near = 0.05;
  double far = 4.0;
  int n_coarse = 32;
  int n_fine = 32;
  Vec3 background = Vec3::Zero();
  double hier_floor = 1e-3;
};

// Renders a batch of rays through the field with one fused MLP evaluation.
// Keeps the forward caches so gradients can be pushed back afterwards.
template <class T>
class BatchRenderer {
 public:
  using Mat = typename Mlp<T>::Mat;
  using Vec = typename Mlp<T>::Vec;
  using Mat3c = Eigen::Matrix<T, Eigen::Dynamic, 3>;
  using V3 = Eigen::Matrix<T, 3, 1>;

  struct Batch {
    std::vector<RaySamples<T>> samples;
    std::vector<ptrdiff_t> offsets;  // row offset of each ray's samples
    typename Mlp<T>::Cache cache;
    Vec sigma;
    Mat3c positions;  // n_samples x 3 (kept for input gradients)
    std::vector<Ray> rays;
    std::vector<RayRenderResult<T>> results;
  };

  BatchRenderer(const Mlp<T>& mlp, const RenderConfig& cfg)
      : mlp_(mlp), cfg_(cfg) {}

  const RenderConfig& config() const { return cfg_; }
  const Mlp<T>& mlp() const { return mlp_; }

  // Renders rays at the given per-ray sample sets.
  void render(const std::vector<Ray>& rays,
              std::vector<RaySamples<T>> samples, Batch& b) const {
    b.rays = rays;
    b.samples = std::move(samples);
    const int n = int(rays.size());
    b.offsets.assign(n + 1, 0);
    for (int i = 0; i < n; ++i)
      b.offsets[i + 1] = b.offsets[i] + ptrdiff_t(b.samples[i].t.size());
    const ptrdiff_t total = b.offsets[n];

    b.positions.resize(total, 3);
    Mat3c dirs(total, 3);
    for (int i = 0; i < n; ++i) {
      V3 o = rays[i].origin.template cast<T>();
      V3 d = rays[i].direction.template cast<T>();
      for (size_t k = 0; k < b.samples[i].t.size(); ++k) {
        b.positions.row(b.offsets[i] + ptrdiff_t(k)) =
            (o + b.samples[i].t[k] * d).transpose();
        dirs.row(b.offsets[i] + ptrdiff_t(k)) = d.transpose();
      }
    }
    mlp_.forward(b.positions, dirs, b.cache);
    b.sigma = mlp_.sigma(b.cache);

    V3 bg = cfg_.background.template cast<T>();
    b.results.resize(n);
    for (int i = 0; i < n; ++i)
      b.results[i] =
          composite_ray<T>(b.samples[i].t, b.sigma.data() + b.offsets[i],
                           b.cache.rgb, b.offsets[i], T(cfg_.near), T(cfg_.far), bg);
  }

  // Stratified coarse pass followed by hierarchical refinement. The rng must
  // be a per-batch substream so training trajectories stay deterministic.
  void render_hierarchical(const std::vector<Ray>& rays, Rng& rng,
                           Batch& b) const {
    std::vector<RaySamples<T>> coarse(rays.size());
    for (size_t i = 0; i < rays.size(); ++i)
      coarse[i] = sample_stratified(T(cfg_.near), T(cfg_.far), cfg_.n_coarse, rng);
    if (cfg_.n_fine <= 0) {
      render(rays, std::move(coarse), b);
      return;
    }
    Batch coarse_batch;
    render(rays, coarse, coarse_batch);
    std::vector<RaySamples<T>> merged(rays.size());
    for (size_t i = 0; i < rays.size(); ++i)
      merged[i] = sample_hierarchical(coarse[i], coarse_batch.results[i].weights,
                                      cfg_.n_fine, rng, T(cfg_.hier_floor));
    render(rays, std::move(merged), b);
  }

  // Pushes per-ray gradients (dcolor, ddepth_raw, optionally ddepth_variance)
  // into the parameter gradient vector. When dpos is non-null the gradient
  // w.r.t. the sample positions is returned as well (used by the reprojection
  // loss).
  void backward(const Batch& b, const Mat3c& dcolor, const Vec& ddepth,
                Vec& grad, Mat3c* dpos = nullptr,
                const Vec* dvariance = nullptr) const {
    const int n = int(b.rays.size());
    const ptrdiff_t total = b.offsets[n];
    Vec dsigma_z = Vec::Zero(total);
    Mat3c drgb = Mat3c::Zero(total, 3);
    V3 bg = cfg_.background.template cast<T>();
    std::vector<T> dsig;
    for (int i = 0; i < n; ++i) {
      dsig.resize(b.samples[i].t.size());
      composite_backward<T>(b.samples[i].t, b.results[i], b.cache.rgb,
                            b.offsets[i], dcolor.row(i).transpose(),
                            ddepth[i], bg, dsig.data(), drgb,
                            dvariance ? (*dvariance)[i] : T(0));
      for (size_t k = 0; k < dsig.size(); ++k)
        dsigma_z[b.offsets[i] + ptrdiff_t(k)] = dsig[k];
    }
    Mat dx;
    mlp_.backward(b.cache, dsigma_z, drgb, grad, dpos ? &dx : nullptr);
    if (dpos) *dpos = dx;
  }

 private:
  const Mlp<T>& mlp_;
  RenderConfig cfg_;
};

}  // namespace nerfmd
