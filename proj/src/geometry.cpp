#include "nerfmd/geometry.hpp"

namespace nerfmd {

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera: empty image plane");
  if (focal <= 0.0) throw std::invalid_argument("camera: focal must be positive");
  if (!(near_t < far_t)) throw std::invalid_argument("camera: near must be < far");
  Mat3 err = rotation.transpose() * rotation - Mat3::Identity();
  if (err.cwiseAbs().maxCoeff() > 1e-6)
    throw std::invalid_argument("camera: rotation is not orthonormal");
}

void MirrorPrimitive::validate() const {
  if (half_extents.minCoeff() <= 0.0)
    throw std::invalid_argument("primitive: half_extents must be positive");
  if (std::abs(u.norm() - 1.0) > 1e-6 || std::abs(v.norm() - 1.0) > 1e-6 ||
      std::abs(u.dot(v)) > 1e-6 || (n - u.cross(v)).norm() > 1e-6)
    throw std::invalid_argument("primitive: frame is not orthonormal");
}

void MirrorPrimitive::orthonormalize() {
  u.normalize();
  v = (v - u.dot(v) * u).normalized();
  n = u.cross(v);
}

Ray camera_ray(const Camera& cam, const Vec2& pixel) {
  if (pixel.x() < 0.0 || pixel.x() >= cam.width || pixel.y() < 0.0 ||
      pixel.y() >= cam.height)
    throw std::invalid_argument("camera_ray: pixel out of bounds");
  // Camera space: x right, y up, looking down -z; pixel y grows downward.
  Vec3 dir_cam((pixel.x() - cam.principal.x()) / cam.focal,
               -(pixel.y() - cam.principal.y()) / cam.focal, -1.0);
  Ray ray;
  ray.origin = cam.origin;
  ray.direction = (cam.rotation * dir_cam).normalized();
  ray.pixel = pixel;
  ray.camera_id = cam.id;
  return ray;
}

Vec3 unproject(const Camera& cam, const Vec2& pixel, double depth) {
  if (!(depth > 0.0)) throw std::invalid_argument("unproject: depth must be positive");
  Ray ray = camera_ray(cam, pixel);
  return ray.origin + depth * ray.direction;
}

std::optional<std::pair<Vec2, double>> reproject(const Camera& cam,
                                                 const Vec3& point) {
  Vec3 p_cam = cam.rotation.transpose() * (point - cam.origin);
  if (p_cam.z() >= -1e-12) return std::nullopt;
  double inv_z = 1.0 / (-p_cam.z());
  Vec2 pixel(cam.principal.x() + cam.focal * p_cam.x() * inv_z,
             cam.principal.y() - cam.focal * p_cam.y() * inv_z);
  // Ray-parameter depth: camera_ray directions are unit length, so the depth
  // along the pixel ray is the Euclidean distance to the point.
  return std::make_pair(pixel, (point - cam.origin).norm());
}

std::array<double, detail::kRectParamCount> rect_param_array(
    const MirrorPrimitive& prim) {
  return {prim.center.x(), prim.center.y(), prim.center.z(),
          prim.u.x(),      prim.u.y(),      prim.u.z(),
          prim.v.x(),      prim.v.y(),      prim.v.z(),
          prim.half_extents.x(), prim.half_extents.y()};
}

void set_rect_params(MirrorPrimitive& prim,
                     const std::array<double, detail::kRectParamCount>& p) {
  prim.center = Vec3(p[0], p[1], p[2]);
  prim.u = Vec3(p[3], p[4], p[5]);
  prim.v = Vec3(p[6], p[7], p[8]);
  prim.half_extents = Vec2(p[9], p[10]);
  prim.orthonormalize();
}

static std::optional<Hit> intersect_rect(const Ray& ray,
                                         const MirrorPrimitive& prim,
                                         double min_t) {
  auto rp = detail::RectParams<double>::from_array(rect_param_array(prim).data());
  auto rh = detail::intersect_rect_plane(rp, ray.origin, ray.direction, min_t);
  if (!rh.valid) return std::nullopt;
  if (std::abs(rh.lu) > prim.half_extents.x() ||
      std::abs(rh.lv) > prim.half_extents.y())
    return std::nullopt;
  if (prim.single_sided && ray.direction.dot(prim.n) > 0.0) return std::nullopt;
  Hit hit;
  hit.t = rh.t;
  hit.point = ray.origin + rh.t * ray.direction;
  hit.local = Vec2(rh.lu, rh.lv);
  hit.normal = ray.direction.dot(prim.n) < 0.0 ? prim.n : Vec3(-prim.n);
  return hit;
}

// Lateral surface of a bounded cylinder with axis prim.n.
static std::optional<Hit> intersect_cylinder(const Ray& ray,
                                             const MirrorPrimitive& prim,
                                             double min_t) {
  const Vec3 axis = prim.n;
  const double radius = prim.half_extents.x();
  const double half_height = prim.half_extents.y();
  Vec3 oc = ray.origin - prim.center;
  Vec3 d_perp = ray.direction - ray.direction.dot(axis) * axis;
  Vec3 o_perp = oc - oc.dot(axis) * axis;
  double a = d_perp.squaredNorm();
  if (a < 1e-14) return std::nullopt;
  double b = 2.0 * d_perp.dot(o_perp);
  double c = o_perp.squaredNorm() - radius * radius;
  double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::nullopt;
  double sq = std::sqrt(disc);
  for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
    if (t <= min_t) continue;
    Vec3 p = ray.origin + t * ray.direction;
    if (std::abs((p - prim.center).dot(axis)) > half_height) continue;
    Hit hit;
    hit.t = t;
    hit.point = p;
    Vec3 radial = (p - prim.center);
    radial -= radial.dot(axis) * axis;
    hit.normal = radial.normalized();
    if (ray.direction.dot(hit.normal) > 0.0) hit.normal = -hit.normal;
    return hit;
  }
  return std::nullopt;
}

std::optional<Hit> intersect_primitive(const Ray& ray,
                                       const MirrorPrimitive& prim,
                                       double min_t) {
  if (prim.kind == PrimitiveKind::Rect) return intersect_rect(ray, prim, min_t);
  return intersect_cylinder(ray, prim, min_t);
}

}  // namespace nerfmd
