#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nerfmd {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Pinhole camera, right-handed, looking down -z in camera space.
struct Camera {
  int id = 0;
  int width = 0;
  int height = 0;
  double focal = 0.0;
  Vec2 principal = Vec2::Zero();
  Mat3 rotation = Mat3::Identity();  // camera-to-world
  Vec3 origin = Vec3::Zero();
  double near_t = 0.01;
  double far_t = 10.0;

  void validate() const;
  Vec3 optical_axis() const { return rotation * Vec3(0.0, 0.0, -1.0); }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  Vec2 pixel = Vec2::Zero();
  int camera_id = -1;
};

// Row-major scalar image, values in [0,1] for color data.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool same_shape(const ImageBuffer& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

enum class PrimitiveKind { Rect, Cylinder };

// Bounded mirror shape. For Rect, half_extents = (h_u, h_v) and the surface
// is the plane through `center` spanned by (u, v). For Cylinder, the axis is
// `n`, half_extents = (radius, half_height).
struct MirrorPrimitive {
  PrimitiveKind kind = PrimitiveKind::Rect;
  Vec3 center = Vec3::Zero();
  Vec3 u = Vec3::UnitX();
  Vec3 v = Vec3::UnitY();
  Vec3 n = Vec3::UnitZ();
  Vec2 half_extents = Vec2(1.0, 1.0);
  bool active = true;
  bool single_sided = false;

  void validate() const;
  // Rebuilds an orthonormal (u, v, n) basis from the current u and v.
  void orthonormalize();
};

struct Hit {
  double t = 0.0;
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  // Local in-plane coordinates of the hit (rect only).
  Vec2 local = Vec2::Zero();
};

// Ray through the center of pixel (x, y). Throws std::invalid_argument when
// the pixel is outside the image.
Ray camera_ray(const Camera& cam, const Vec2& pixel);

// Point at `depth` along the pixel ray. depth must be positive.
Vec3 unproject(const Camera& cam, const Vec2& pixel, double depth);

// Projects a world point into `cam`. Returns (pixel, ray-parameter depth),
// or nullopt when the point is not in front of the camera.
std::optional<std::pair<Vec2, double>> reproject(const Camera& cam,
                                                 const Vec3& point);

inline Vec3 reflect_direction(const Vec3& d, const Vec3& n) {
  return d - 2.0 * d.dot(n) * n;
}

// Nearest intersection with the primitive beyond min_t, or nullopt on miss.
std::optional<Hit> intersect_primitive(const Ray& ray,
                                       const MirrorPrimitive& prim,
                                       double min_t = 1e-6);

// --- Generic scalar kernels -------------------------------------------------
// Shared between the double-precision path and the dual-number path used for
// parameter derivatives. Rect parameters are passed as raw components in the
// order (center, u, v, half_extents); u/v need not be normalized here, the
// basis is normalized inside.

namespace detail {

inline double value_of(double x) { return x; }
inline double abs_value(double x) { return std::abs(x); }

template <class S>
using V3 = std::array<S, 3>;

template <class S>
V3<S> v3_sub(const V3<S>& a, const V3<S>& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

template <class S, class R>
V3<S> v3_subm(const V3<S>& a, const R& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

template <class S>
S v3_dot(const V3<S>& a, const V3<S>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

template <class S, class R>
S v3_dotm(const V3<S>& a, const R& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

template <class S>
V3<S> v3_cross(const V3<S>& a, const V3<S>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

template <class S>
V3<S> v3_normalize(const V3<S>& a) {
  using std::sqrt;
  S len = sqrt(v3_dot(a, a));
  return {a[0] / len, a[1] / len, a[2] / len};
}

// Rect parameter vector layout used for differentiable geometry.
constexpr int kRectParamCount = 11;  // center(3) u(3) v(3) half_extents(2)

template <class S>
struct RectParams {
  V3<S> center, u, v;
  S hu, hv;

  static RectParams from_array(const S* p) {
    return {{p[0], p[1], p[2]}, {p[3], p[4], p[5]}, {p[6], p[7], p[8]},
            p[9], p[10]};
  }
};

template <class S>
struct RectHit {
  S t;
  S lu, lv;  // local plane coordinates
  bool valid = false;
};

// Ray/plane intersection with local rect coordinates. `ray_o`/`ray_d` are
// plain doubles; only the rect parameters carry derivative information.
template <class S>
RectHit<S> intersect_rect_plane(const RectParams<S>& rp, const Vec3& ray_o,
                                const Vec3& ray_d, double min_t) {
  RectHit<S> out;
  V3<S> uh = v3_normalize(rp.u);
  // Gram-Schmidt so the basis stays orthonormal for skewed inputs.
  S uv = v3_dot(uh, rp.v);
  V3<S> vt = {rp.v[0] - uv * uh[0], rp.v[1] - uv * uh[1], rp.v[2] - uv * uh[2]};
  V3<S> vh = v3_normalize(vt);
  V3<S> nh = v3_cross(uh, vh);

  S denom = v3_dotm(nh, ray_d);
  if (abs_value(denom) < S(1e-12)) return out;
  V3<S> co = v3_subm(rp.center, ray_o);
  S t = v3_dot(nh, co) / denom;
  if (value_of(t) <= min_t) return out;

  V3<S> p = {S(ray_o[0]) + t * ray_d[0], S(ray_o[1]) + t * ray_d[1],
             S(ray_o[2]) + t * ray_d[2]};
  V3<S> rel = v3_sub(p, rp.center);
  out.t = t;
  out.lu = v3_dot(rel, uh);
  out.lv = v3_dot(rel, vh);
  out.valid = true;
  return out;
}

}  // namespace detail

std::array<double, detail::kRectParamCount> rect_param_array(
    const MirrorPrimitive& prim);
void set_rect_params(MirrorPrimitive& prim,
                     const std::array<double, detail::kRectParamCount>& p);

}  // namespace nerfmd
