#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nerfmd/dual.hpp"
#include "nerfmd/geometry.hpp"
#include "nerfmd/rng.hpp"

using namespace nerfmd;

namespace {

Camera make_camera(int w = 64, int h = 64, double focal = 64.0) {
  Camera cam;
  cam.id = 0;
  cam.width = w;
  cam.height = h;
  cam.focal = focal;
  cam.principal = Vec2(w / 2.0, h / 2.0);
  cam.near_t = 0.1;
  cam.far_t = 10.0;
  return cam;
}

Vec3 random_unit(Rng& rng) {
  while (true) {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    if (v.norm() > 1e-6) return v.normalized();
  }
}

Mat3 random_rotation(Rng& rng) {
  Vec3 a = random_unit(rng);
  Vec3 b = random_unit(rng);
  Vec3 c = (b - a.dot(b) * a).normalized();
  Mat3 R;
  R.col(0) = a;
  R.col(1) = c;
  R.col(2) = a.cross(c);
  return R;
}

// Dense triangle-mesh ray cast used as an oracle for the analytic rect
// intersection: the rect is tessellated into a grid of triangles and each is
// tested with Moller-Trumbore.
std::optional<double> mesh_raycast_rect(const Ray& ray, const MirrorPrimitive& prim,
                                        int grid = 32) {
  double best = -1.0;
  auto corner = [&](int i, int j) {
    double lu = -prim.half_extents.x() + 2.0 * prim.half_extents.x() * i / grid;
    double lv = -prim.half_extents.y() + 2.0 * prim.half_extents.y() * j / grid;
    return Vec3(prim.center + lu * prim.u + lv * prim.v);
  };
  auto tri_hit = [&](const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 e1 = b - a, e2 = c - a;
    Vec3 p = ray.direction.cross(e2);
    double det = e1.dot(p);
    if (std::abs(det) < 1e-14) return;
    double inv = 1.0 / det;
    Vec3 s = ray.origin - a;
    double u = s.dot(p) * inv;
    if (u < -1e-9 || u > 1.0 + 1e-9) return;
    Vec3 q = s.cross(e1);
    double v = ray.direction.dot(q) * inv;
    if (v < -1e-9 || u + v > 1.0 + 1e-9) return;
    double t = e2.dot(q) * inv;
    if (t <= 1e-6) return;
    if (best < 0.0 || t < best) best = t;
  };
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j) {
      tri_hit(corner(i, j), corner(i + 1, j), corner(i + 1, j + 1));
      tri_hit(corner(i, j), corner(i + 1, j + 1), corner(i, j + 1));
    }
  if (best < 0.0) return std::nullopt;
  return best;
}

}  // namespace

TEST_CASE("camera_ray at principal point follows the optical axis") {
  Camera cam = make_camera();
  Ray r = camera_ray(cam, cam.principal);
  CHECK((r.direction - Vec3(0, 0, -1)).norm() < 1e-12);
  CHECK((r.origin - cam.origin).norm() == 0.0);
}

TEST_CASE("camera_ray one focal length off-center") {
  Camera cam = make_camera(256, 256, 100.0);
  Ray r = camera_ray(cam, cam.principal + Vec2(100.0, 0.0));
  Vec3 expect = Vec3(1, 0, -1).normalized();
  CHECK((r.direction - expect).norm() < 1e-12);
}

TEST_CASE("camera_ray rejects out-of-bounds pixels") {
  Camera cam = make_camera();
  CHECK_THROWS_AS(camera_ray(cam, Vec2(-1.0, 0.0)), std::invalid_argument);
  CHECK_THROWS_AS(camera_ray(cam, Vec2(0.0, 64.0)), std::invalid_argument);
}

TEST_CASE("camera_ray directions are unit length") {
  Rng rng(7);
  Camera cam = make_camera();
  cam.rotation = random_rotation(rng);
  cam.origin = Vec3(rng.normal(), rng.normal(), rng.normal());
  for (int i = 0; i < 100; ++i) {
    Vec2 px(rng.uniform(0, 64), rng.uniform(0, 64));
    CHECK(std::abs(camera_ray(cam, px).direction.norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("unproject basics") {
  Camera cam = make_camera();
  CHECK_THROWS_AS(unproject(cam, cam.principal, 0.0), std::invalid_argument);
  Vec3 p = unproject(cam, cam.principal, 2.0);
  CHECK((p - Vec3(0, 0, -2)).norm() < 1e-12);
}

TEST_CASE("reproject on-axis point") {
  Camera cam = make_camera();
  auto res = reproject(cam, Vec3(0, 0, -3));
  REQUIRE(res.has_value());
  CHECK((res->first - cam.principal).norm() < 1e-9);
  CHECK(res->second == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("reproject is the inverse of unproject") {
  Rng rng(11);
  Camera cam = make_camera();
  cam.rotation = random_rotation(rng);
  cam.origin = Vec3(0.3, -0.2, 0.9);
  for (int i = 0; i < 200; ++i) {
    Vec2 px(rng.uniform(0, 64), rng.uniform(0, 64));
    double depth = rng.uniform(0.2, 5.0);
    Vec3 p = unproject(cam, px, depth);
    auto res = reproject(cam, p);
    REQUIRE(res.has_value());
    CHECK((res->first - px).norm() < 1e-6);
    CHECK(std::abs(res->second - depth) < 1e-6);
  }
}

TEST_CASE("reproject matches a full-matrix projection oracle") {
  Rng rng(13);
  Camera cam = make_camera(128, 96, 80.0);
  cam.rotation = random_rotation(rng);
  cam.origin = Vec3(rng.normal(), rng.normal(), rng.normal());
  // 3x4 projection matrix oracle: K [R^T | -R^T o] with a y flip.
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = cam.focal;
  K(1, 1) = -cam.focal;
  K(0, 2) = cam.principal.x();
  K(1, 2) = cam.principal.y();
  for (int i = 0; i < 200; ++i) {
    Vec3 p = cam.origin + cam.rotation * Vec3(rng.normal(), rng.normal(),
                                              -rng.uniform(0.5, 5.0));
    auto res = reproject(cam, p);
    REQUIRE(res.has_value());
    Vec3 pc = cam.rotation.transpose() * (p - cam.origin);
    Vec3 h = K * Vec3(pc.x(), pc.y(), -pc.z());
    // -z is the projective depth; pixel = (h.x/h.z, h.y/h.z)
    CHECK(std::abs(res->first.x() - h.x() / h.z()) < 1e-6);
    CHECK(std::abs(res->first.y() - h.y() / h.z()) < 1e-6);
  }
}

TEST_CASE("reproject signals points behind the camera") {
  Camera cam = make_camera();
  CHECK_FALSE(reproject(cam, Vec3(0, 0, 5)).has_value());
}

TEST_CASE("reflect_direction basics and involution") {
  CHECK((reflect_direction(Vec3(0, 0, -1), Vec3(0, 0, 1)) - Vec3(0, 0, 1)).norm() < 1e-15);
  Vec3 d = Vec3(1, 0, 0);
  CHECK((reflect_direction(d, Vec3(0, 0, 1)) - d).norm() < 1e-15);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    Vec3 dd = random_unit(rng);
    Vec3 n = random_unit(rng);
    Vec3 r = reflect_direction(dd, n);
    CHECK(std::abs(r.norm() - 1.0) < 1e-9);
    CHECK((reflect_direction(r, n) - dd).norm() < 1e-9);
  }
}

TEST_CASE("rect intersection basic hit and miss") {
  MirrorPrimitive prim;
  Ray ray;
  ray.origin = Vec3(0, 0, 5);
  ray.direction = Vec3(0, 0, -1);
  auto hit = intersect_primitive(ray, prim);
  REQUIRE(hit.has_value());
  CHECK(hit->t == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(hit->point.norm() < 1e-12);

  MirrorPrimitive offset = prim;
  offset.center = Vec3(10, 0, 0);
  CHECK_FALSE(intersect_primitive(ray, offset).has_value());
}

TEST_CASE("rect intersection matches triangle-mesh ray cast oracle") {
  Rng rng(17);
  MirrorPrimitive prim;
  prim.center = Vec3(0.2, -0.1, 0.4);
  prim.u = random_unit(rng);
  prim.v = (random_unit(rng) - prim.u * prim.u.dot(random_unit(rng))).normalized();
  prim.orthonormalize();
  prim.half_extents = Vec2(0.8, 0.5);

  int hits = 0;
  for (int i = 0; i < 1000; ++i) {
    Ray ray;
    ray.origin = prim.center + 3.0 * random_unit(rng);
    ray.direction = (prim.center + Vec3(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2),
                                        rng.uniform(-1.2, 1.2)) -
                     ray.origin)
                        .normalized();
    auto ours = intersect_primitive(ray, prim);
    auto mesh = mesh_raycast_rect(ray, prim);
    if (ours && mesh) {
      CHECK(std::abs(ours->t - *mesh) < 1e-6);
      ++hits;
    } else if (ours.has_value() != mesh.has_value()) {
      // only silhouette-grazing rays may disagree
      double edge_u = prim.half_extents.x() -
                      std::abs(ours ? ours->local.x() : 0.0);
      double edge_v = prim.half_extents.y() -
                      std::abs(ours ? ours->local.y() : 0.0);
      CHECK(std::min(edge_u, edge_v) < 1e-6);
    }
  }
  CHECK(hits > 100);
}

TEST_CASE("rect intersection is invariant under rigid transforms") {
  Rng rng(23);
  MirrorPrimitive prim;
  prim.half_extents = Vec2(0.7, 0.9);
  for (int i = 0; i < 200; ++i) {
    Ray ray;
    ray.origin = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(1, 4));
    ray.direction = (Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.0) -
                     ray.origin)
                        .normalized();
    auto before = intersect_primitive(ray, prim);

    Mat3 R = random_rotation(rng);
    Vec3 t(rng.normal(), rng.normal(), rng.normal());
    MirrorPrimitive moved = prim;
    moved.center = R * prim.center + t;
    moved.u = R * prim.u;
    moved.v = R * prim.v;
    moved.n = R * prim.n;
    Ray moved_ray = ray;
    moved_ray.origin = R * ray.origin + t;
    moved_ray.direction = R * ray.direction;
    auto after = intersect_primitive(moved_ray, moved);

    REQUIRE(before.has_value() == after.has_value());
    if (before) CHECK(std::abs(before->t - after->t) < 1e-9);
  }
}

TEST_CASE("rect hit distance derivatives match central differences") {
  Rng rng(29);
  MirrorPrimitive prim;
  prim.center = Vec3(0.1, 0.2, -0.3);
  prim.half_extents = Vec2(0.9, 0.6);
  prim.u = Vec3(1, 0.1, 0).normalized();
  prim.v = Vec3(-0.1, 1, 0.2);
  prim.orthonormalize();

  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Ray ray;
    ray.origin = prim.center + prim.n * rng.uniform(1.0, 3.0) +
                 prim.u * rng.uniform(-0.5, 0.5) + prim.v * rng.uniform(-0.5, 0.5);
    ray.direction = (prim.center + prim.u * rng.uniform(-0.4, 0.4) +
                     prim.v * rng.uniform(-0.4, 0.4) - ray.origin)
                        .normalized();
    if (std::abs(ray.direction.dot(prim.n)) < 0.1) continue;
    auto base_hit = intersect_primitive(ray, prim);
    if (!base_hit) continue;
    ++checked;

    auto params = rect_param_array(prim);
    using D = Dual<detail::kRectParamCount>;
    std::array<D, detail::kRectParamCount> dp;
    for (int i = 0; i < detail::kRectParamCount; ++i)
      dp[i] = D::seed(params[i], i);
    auto rp = detail::RectParams<D>::from_array(dp.data());
    auto rh = detail::intersect_rect_plane(rp, ray.origin, ray.direction, 1e-6);
    REQUIRE(rh.valid);

    const double h = 1e-4;
    for (int i = 0; i < 9; ++i) {  // half extents do not move the plane
      auto pp = params, pm = params;
      pp[i] += h;
      pm[i] -= h;
      auto hp = detail::intersect_rect_plane(
          detail::RectParams<double>::from_array(pp.data()), ray.origin,
          ray.direction, 1e-6);
      auto hm = detail::intersect_rect_plane(
          detail::RectParams<double>::from_array(pm.data()), ray.origin,
          ray.direction, 1e-6);
      REQUIRE(hp.valid);
      REQUIRE(hm.valid);
      double fd = (hp.t - hm.t) / (2 * h);
      double ad = rh.t.d[i];
      double denom = std::max({std::abs(fd), std::abs(ad), 1e-6});
      CHECK(std::abs(fd - ad) / denom < 1e-3);
    }
  }
  CHECK(checked >= 20);
}

TEST_CASE("cylinder intersection hits the lateral surface") {
  MirrorPrimitive prim;
  prim.kind = PrimitiveKind::Cylinder;
  prim.n = Vec3(0, 1, 0);
  prim.u = Vec3(1, 0, 0);
  prim.v = Vec3(0, 0, -1);
  prim.half_extents = Vec2(0.5, 1.0);  // radius, half height
  Ray ray;
  ray.origin = Vec3(3, 0, 0);
  ray.direction = Vec3(-1, 0, 0);
  auto hit = intersect_primitive(ray, prim);
  REQUIRE(hit.has_value());
  CHECK(hit->t == doctest::Approx(2.5));
  CHECK((hit->normal - Vec3(1, 0, 0)).norm() < 1e-12);
  // above the cap: miss
  ray.origin = Vec3(3, 1.5, 0);
  CHECK_FALSE(intersect_primitive(ray, prim).has_value());
}

TEST_CASE("camera and primitive validation") {
  Camera cam = make_camera();
  CHECK_NOTHROW(cam.validate());
  cam.rotation(0, 0) = 2.0;
  CHECK_THROWS(cam.validate());

  MirrorPrimitive prim;
  CHECK_NOTHROW(prim.validate());
  prim.half_extents = Vec2(0.0, 1.0);
  CHECK_THROWS(prim.validate());
}
