#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "nerfmd/dual.hpp"
#include "nerfmd/field.hpp"
#include "nerfmd/losses.hpp"
#include "nerfmd/trainer.hpp"

namespace nerfmd {

struct PathSegment {
  Ray ray;
  int primitive = -1;  // hit primitive id, -1 for the final open segment
  Hit hit;             // valid when primitive >= 0
};

struct ReflectedPath {
  std::vector<PathSegment> segments;  // last segment is always open
  int bounce_count = 0;
};

struct ReflectConfig {
  int bounce_limit = 2;
  double eps_t = 1e-4;        // hit offset to avoid re-intersecting
  double coverage_cut = 1e-6; // below: branch treated as absent
};

// Nearest-hit iteration through the active primitives, reflecting at each
// surface until a miss or the bounce limit.
inline ReflectedPath trace_with_reflections(
    const Ray& ray, const std::vector<MirrorPrimitive>& primitives,
    int bounce_limit, double eps_t = 1e-4) {
  if (bounce_limit < 0)
    throw std::invalid_argument("trace_with_reflections: negative bounce limit");
  ReflectedPath path;
  Ray cur = ray;
  for (int bounce = 0; bounce < bounce_limit; ++bounce) {
    int best = -1;
    Hit best_hit;
    for (int p = 0; p < int(primitives.size()); ++p) {
      if (!primitives[p].active) continue;
      auto hit = intersect_primitive(cur, primitives[p], eps_t);
      if (hit && (best < 0 || hit->t < best_hit.t)) {
        best = p;
        best_hit = *hit;
      }
    }
    if (best < 0) break;
    path.segments.push_back({cur, best, best_hit});
    ++path.bounce_count;
    Ray next;
    next.origin = best_hit.point;
    next.direction = reflect_direction(cur.direction, best_hit.normal);
    next.pixel = cur.pixel;
    next.camera_id = cur.camera_id;
    cur = next;
  }
  path.segments.push_back({cur, -1, Hit{}});
  return path;
}

namespace detail {

// Fraction of the pixel footprint on the positive side of an edge at signed
// center distance s, for a footprint of width w: a linear ramp from 0 to 1
// as the footprint crosses the edge. This is exact for a straight edge
// aligned with the footprint and stays within a few percent for rotated or
// tilted edges.
template <class S>
S edge_fraction(S s, S w) {
  S u = s / w + S(0.5);
  if (value_of(u) <= 0.0) return S(0);
  if (value_of(u) >= 1.0) return S(1);
  return u;
}

// Pinhole ray without the image-bounds check; probe pixels for the footprint
// Jacobian may sit marginally outside the image.
inline Vec3 pixel_direction(const Camera& cam, const Vec2& pixel) {
  Vec3 dir_cam((pixel.x() - cam.principal.x()) / cam.focal,
               -(pixel.y() - cam.principal.y()) / cam.focal, -1.0);
  return (cam.rotation * dir_cam).normalized();
}

// Fraction of the footprint covered by the rectangle: product of the four
// per-edge fractions. The footprint extent along each rect axis comes from
// the secant Jacobian of the pixel -> plane-coordinate mapping, probed half a
// pixel to each side, so oblique viewing and anisotropy are accounted for.
template <class S>
S coverage_kernel(const RectParams<S>& rp, const Camera& cam,
                  const Vec2& pixel) {
  Vec3 o = cam.origin;
  auto hit = intersect_rect_plane(rp, o, pixel_direction(cam, pixel), 1e-9);
  if (!hit.valid) return S(0);

  auto hx0 = intersect_rect_plane(
      rp, o, pixel_direction(cam, pixel - Vec2(0.5, 0.0)), 1e-9);
  auto hx1 = intersect_rect_plane(
      rp, o, pixel_direction(cam, pixel + Vec2(0.5, 0.0)), 1e-9);
  auto hy0 = intersect_rect_plane(
      rp, o, pixel_direction(cam, pixel - Vec2(0.0, 0.5)), 1e-9);
  auto hy1 = intersect_rect_plane(
      rp, o, pixel_direction(cam, pixel + Vec2(0.0, 0.5)), 1e-9);

  S wu, wv;
  if (hx0.valid && hx1.valid && hy0.valid && hy1.valid) {
    using std::sqrt;
    S du_x = hx1.lu - hx0.lu, du_y = hy1.lu - hy0.lu;
    S dv_x = hx1.lv - hx0.lv, dv_y = hy1.lv - hy0.lv;
    wu = sqrt(du_x * du_x + du_y * du_y);
    wv = sqrt(dv_x * dv_x + dv_y * dv_y);
  } else {
    // grazing probe: fall back to the isotropic pixel size at the hit
    wu = wv = hit.t * S(1.0 / cam.focal);
  }
  S m = edge_fraction(rp.hu - hit.lu, wu);
  m = m * edge_fraction(rp.hu + hit.lu, wu);
  m = m * edge_fraction(rp.hv - hit.lv, wv);
  m = m * edge_fraction(rp.hv + hit.lv, wv);
  return m;
}

}  // namespace detail

// Antialiased first-bounce coverage of the primitive by the pixel frustum.
inline double pixel_coverage(const Camera& cam, const Vec2& pixel,
                             const MirrorPrimitive& prim) {
  if (!prim.active) return 0.0;
  auto params = rect_param_array(prim);
  auto rp = detail::RectParams<double>::from_array(params.data());
  return detail::coverage_kernel(rp, cam, pixel);
}

// Coverage plus its derivative w.r.t. the 11 rect parameters.
inline double pixel_coverage_grad(
    const Camera& cam, const Vec2& pixel, const MirrorPrimitive& prim,
    std::array<double, detail::kRectParamCount>& dM) {
  dM.fill(0.0);
  if (!prim.active) return 0.0;
  auto params = rect_param_array(prim);
  using D = Dual<detail::kRectParamCount>;
  std::array<D, detail::kRectParamCount> dual;
  for (int i = 0; i < detail::kRectParamCount; ++i) {
    dual[i] = D(params[i]);
    dual[i].d[i] = 1.0;
  }
  auto rp = detail::RectParams<D>::from_array(dual.data());
  D m = detail::coverage_kernel(rp, cam, pixel);
  for (int i = 0; i < detail::kRectParamCount; ++i) dM[i] = m.d[i];
  return m.v;
}

// Stage-2 batch renderer: primary pass plus a reflected pass whose samples
// follow the bent path, composited over arc length so transmittance carries
// across the bounce.
template <class T>
class Stage2Renderer {
 public:
  using Mat3c = Eigen::Matrix<T, Eigen::Dynamic, 3>;
  using Vec = typename Mlp<T>::Vec;
  using V3 = Eigen::Matrix<T, 3, 1>;

  struct Forward {
    typename BatchRenderer<T>::Batch primary;
    std::vector<double> coverage;   // per ray, max over primitives
    std::vector<int> cover_prim;    // argmax primitive, -1 when none
    // reflected branch, only for rays with coverage > cut
    std::vector<int> refl_of_ray;   // ray index -> entry index or -1
    std::vector<int> refl_rays;
    std::vector<RaySamples<T>> refl_ts;  // arc-length samples
    std::vector<ptrdiff_t> refl_offsets;
    typename Mlp<T>::Cache refl_cache;
    Vec refl_sigma;
    std::vector<RayRenderResult<T>> refl_results;
    Mat3c colors;  // blended output per ray
  };

  Stage2Renderer(const Mlp<T>& mlp, const RenderConfig& rc,
                 const ReflectConfig& fc,
                 const std::vector<MirrorPrimitive>& primitives)
      : mlp_(mlp), rc_(rc), fc_(fc), primitives_(primitives),
        plain_(mlp, rc) {}

  const RenderConfig& render_config() const { return rc_; }
  const std::vector<MirrorPrimitive>& primitives() const { return primitives_; }

  // When rng is null, deterministic midpoint samples are used (evaluation).
  void render(const std::vector<Ray>& rays, const Camera& cam, Rng* rng,
              Forward& f) const {
    const int n = int(rays.size());
    const int n_samples = rc_.n_coarse + rc_.n_fine;

    f.coverage.assign(n, 0.0);
    f.cover_prim.assign(n, -1);
    for (int i = 0; i < n; ++i) {
      for (int p = 0; p < int(primitives_.size()); ++p) {
        if (!primitives_[p].active) continue;
        double m = pixel_coverage(cam, rays[i].pixel, primitives_[p]);
        if (m > f.coverage[i]) {
          f.coverage[i] = m;
          f.cover_prim[i] = p;
        }
      }
    }

    // primary pass over all rays
    std::vector<RaySamples<T>> psamples(n);
    for (int i = 0; i < n; ++i)
      psamples[i] = rng ? sample_stratified(T(rc_.near), T(rc_.far), n_samples, *rng)
                        : sample_uniform(T(rc_.near), T(rc_.far), n_samples);
    plain_.render(rays, std::move(psamples), f.primary);

    // reflected pass for covered rays
    f.refl_of_ray.assign(n, -1);
    f.refl_rays.clear();
    f.refl_ts.clear();
    for (int i = 0; i < n; ++i) {
      if (f.coverage[i] <= fc_.coverage_cut) continue;
      f.refl_of_ray[i] = int(f.refl_rays.size());
      f.refl_rays.push_back(i);
      f.refl_ts.push_back(
          rng ? sample_stratified(T(rc_.near), T(rc_.far), n_samples, *rng)
              : sample_uniform(T(rc_.near), T(rc_.far), n_samples));
    }

    const int m = int(f.refl_rays.size());
    f.refl_offsets.assign(m + 1, 0);
    for (int e = 0; e < m; ++e)
      f.refl_offsets[e + 1] = f.refl_offsets[e] + ptrdiff_t(f.refl_ts[e].t.size());
    Mat3c pos(f.refl_offsets[m], 3), dir(f.refl_offsets[m], 3);
    for (int e = 0; e < m; ++e) {
      ReflectedPath path = trace_with_reflections(
          rays[f.refl_rays[e]], primitives_, fc_.bounce_limit, fc_.eps_t);
      fill_path_samples(path, f.refl_ts[e], pos, dir, f.refl_offsets[e]);
    }
    f.refl_results.resize(m);
    if (m > 0) {
      mlp_.forward(pos, dir, f.refl_cache);
      f.refl_sigma = mlp_.sigma(f.refl_cache);
      V3 bg = rc_.background.template cast<T>();
      for (int e = 0; e < m; ++e)
        f.refl_results[e] = composite_ray<T>(
            f.refl_ts[e].t, f.refl_sigma.data() + f.refl_offsets[e],
            f.refl_cache.rgb, f.refl_offsets[e], T(rc_.near), T(rc_.far), bg);
    }

    f.colors.resize(n, 3);
    for (int i = 0; i < n; ++i) {
      T M = T(std::min(f.coverage[i], 1.0));
      V3 c = (T(1) - M) * f.primary.results[i].color;
      if (f.refl_of_ray[i] >= 0)
        c += M * f.refl_results[f.refl_of_ray[i]].color;
      f.colors.row(i) = c.transpose();
    }
  }

  // Backpropagates dL/dcolor of the blended output into the field gradient
  // (both branches). When dM is non-null it receives dL/dM per ray, the only
  // gradient path to the primitive parameters.
  void backward(const Forward& f, const Mat3c& dcolor, Vec& grad,
                std::vector<double>* dM = nullptr) const {
    const int n = int(f.colors.rows());
    if (dM) dM->assign(n, 0.0);

    Mat3c dprimary(n, 3);
    Vec zero_depth = Vec::Zero(n);
    for (int i = 0; i < n; ++i) {
      T M = T(std::min(f.coverage[i], 1.0));
      dprimary.row(i) = (T(1) - M) * dcolor.row(i);
      if (dM && f.cover_prim[i] >= 0 && f.refl_of_ray[i] >= 0) {
        V3 diff = f.refl_results[f.refl_of_ray[i]].color -
                  f.primary.results[i].color;
        (*dM)[i] = double(dcolor.row(i).dot(diff.transpose()));
      }
    }
    plain_.backward(f.primary, dprimary, zero_depth, grad);

    const int m = int(f.refl_rays.size());
    if (m == 0) return;
    const ptrdiff_t total = f.refl_offsets[m];
    Vec dsigma = Vec::Zero(total);
    Mat3c drgb = Mat3c::Zero(total, 3);
    V3 bg = rc_.background.template cast<T>();
    std::vector<T> dsig;
    for (int e = 0; e < m; ++e) {
      int i = f.refl_rays[e];
      T M = T(std::min(f.coverage[i], 1.0));
      V3 dc = M * dcolor.row(i).transpose();
      dsig.resize(f.refl_ts[e].t.size());
      composite_backward<T>(f.refl_ts[e].t, f.refl_results[e], f.refl_cache.rgb,
                            f.refl_offsets[e], dc, T(0), bg, dsig.data(), drgb);
      for (size_t k = 0; k < dsig.size(); ++k)
        dsigma[f.refl_offsets[e] + ptrdiff_t(k)] = dsig[k];
    }
    mlp_.backward(f.refl_cache, dsigma, drgb, grad);
  }

 private:
  // Places arc-length samples along the bent path.
  void fill_path_samples(const ReflectedPath& path, const RaySamples<T>& ts,
                         Mat3c& pos, Mat3c& dir, ptrdiff_t row0) const {
    // arc length at which each segment starts
    std::vector<double> seg_start;
    seg_start.reserve(path.segments.size());
    double acc = 0.0;
    for (const PathSegment& seg : path.segments) {
      seg_start.push_back(acc);
      if (seg.primitive >= 0) acc += seg.hit.t;
    }
    for (size_t k = 0; k < ts.t.size(); ++k) {
      double s = double(ts.t[k]);
      size_t seg_i = 0;
      while (seg_i + 1 < path.segments.size() && s >= seg_start[seg_i + 1])
        ++seg_i;
      const PathSegment& seg = path.segments[seg_i];
      double local = s - seg_start[seg_i];
      Vec3 p = seg.ray.origin + local * seg.ray.direction;
      pos.row(row0 + ptrdiff_t(k)) = p.transpose().template cast<T>();
      dir.row(row0 + ptrdiff_t(k)) =
          seg.ray.direction.transpose().template cast<T>();
    }
  }

  const Mlp<T>& mlp_;
  RenderConfig rc_;
  ReflectConfig fc_;
  const std::vector<MirrorPrimitive>& primitives_;
  BatchRenderer<T> plain_;
};

// Single-pixel blended render; evaluates only the branches a non-degenerate
// mask weight requires.
template <class T>
Vec3 render_pixel_blended(const Mlp<T>& mlp, const RenderConfig& rc,
                          const ReflectConfig& fc,
                          const std::vector<MirrorPrimitive>& primitives,
                          const Camera& cam, const Vec2& pixel) {
  Stage2Renderer<T> renderer(mlp, rc, fc, primitives);
  Ray ray = camera_ray(cam, pixel);
  double M = 0.0;
  for (const MirrorPrimitive& p : primitives)
    if (p.active) M = std::max(M, pixel_coverage(cam, pixel, p));
  M = std::min(M, 1.0);

  typename Stage2Renderer<T>::Forward f;
  renderer.render({ray}, cam, nullptr, f);
  if (M <= fc.coverage_cut)
    return f.primary.results[0].color.template cast<double>();
  if (f.refl_of_ray[0] >= 0 && M >= 1.0)
    return f.refl_results[0].color.template cast<double>();
  return f.colors.row(0).transpose().template cast<double>();
}

// Joint stage-2 optimization state: field + primitive parameters.
template <class T>
struct Stage2State {
  Mlp<T>* mlp = nullptr;
  Adam<T>* field_opt = nullptr;
  std::vector<MirrorPrimitive> primitives;
  std::vector<Adam<double>> prim_opts;
  PNormSchedule schedule{1, 2, 3};
  int iteration = 0;
  RenderConfig render_cfg;
  ReflectConfig reflect_cfg;
  double min_half_extent = 1e-4;
};

// One batch step: p-scheduled image loss on blended colors; field gets
// gradients through both branches, primitives only through the coverage
// masks. Non-finite losses reject the step and halve the learning rates.
template <class T>
LossReport stage2_train_step(Stage2State<T>& st, const std::vector<Ray>& rays,
                             const Eigen::Matrix<T, Eigen::Dynamic, 3>& targets,
                             const Camera& cam, Rng& rng) {
  Stage2Renderer<T> renderer(*st.mlp, st.render_cfg, st.reflect_cfg,
                             st.primitives);
  typename Stage2Renderer<T>::Forward f;
  renderer.render(rays, cam, &rng, f);

  double p = st.schedule(double(st.iteration));
  LossReport report;
  report.p_used = p;
  report.image_loss = double(image_loss<T>(f.colors, targets, p));
  report.total = report.image_loss;

  if (!std::isfinite(report.image_loss)) {
    st.field_opt->halve_learning_rate();
    for (auto& o : st.prim_opts) o.halve_learning_rate();
    ++st.iteration;
    return report;
  }

  auto dcolor = image_loss_grad<T>(f.colors, targets, p);
  typename Mlp<T>::Vec grad;
  grad.setZero(st.mlp->params().size());
  std::vector<double> dM;
  renderer.backward(f, dcolor, grad, &dM);

  // primitive gradients through the mask only
  std::vector<Eigen::Matrix<double, detail::kRectParamCount, 1>> pgrad(
      st.primitives.size(),
      Eigen::Matrix<double, detail::kRectParamCount, 1>::Zero());
  std::array<double, detail::kRectParamCount> dm_theta;
  for (size_t i = 0; i < rays.size(); ++i) {
    int p_i = f.cover_prim[i];
    if (p_i < 0 || dM[i] == 0.0 || f.coverage[i] >= 1.0) continue;
    pixel_coverage_grad(cam, rays[i].pixel, st.primitives[p_i], dm_theta);
    for (int j = 0; j < detail::kRectParamCount; ++j)
      pgrad[p_i][j] += dM[i] * dm_theta[j];
  }

  bool finite = grad.allFinite();
  for (const auto& g : pgrad) finite = finite && g.allFinite();
  if (!finite) {
    st.field_opt->halve_learning_rate();
    for (auto& o : st.prim_opts) o.halve_learning_rate();
    ++st.iteration;
    return report;
  }

  st.field_opt->update(st.mlp->params(), grad);
  for (size_t p_i = 0; p_i < st.primitives.size(); ++p_i) {
    auto params = rect_param_array(st.primitives[p_i]);
    Eigen::Map<Eigen::Matrix<double, detail::kRectParamCount, 1>> pv(params.data());
    st.prim_opts[p_i].update(pv, pgrad[p_i]);
    params[9] = std::max(params[9], st.min_half_extent);
    params[10] = std::max(params[10], st.min_half_extent);
    set_rect_params(st.primitives[p_i], params);
    st.primitives[p_i].orthonormalize();
  }
  ++st.iteration;
  return report;
}

}  // namespace nerfmd
