#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nerfmd/losses.hpp"
#include "nerfmd/trainer.hpp"
#include "oracles.hpp"

using namespace nerfmd;

namespace {

Camera look_at_camera(int id, const Vec3& origin, const Vec3& target) {
  Camera cam;
  cam.id = id;
  cam.width = 8;
  cam.height = 8;
  cam.focal = 10.0;
  cam.principal = Vec2(4.0, 4.0);
  cam.origin = origin;
  Vec3 fwd = (target - origin).normalized();
  Vec3 right = fwd.cross(Vec3(0, 1, 0)).normalized();
  Vec3 up = right.cross(fwd);
  cam.rotation.col(0) = right;
  cam.rotation.col(1) = up;
  cam.rotation.col(2) = -fwd;
  return cam;
}

using Mat3c = Eigen::Matrix<double, Eigen::Dynamic, 3>;

}  // namespace

TEST_CASE("image loss arithmetic") {
  Mat3c a(1, 3), b(1, 3);
  a << 0.5, 0.0, 0.0;
  b << 0.0, 0.0, 0.0;
  CHECK(image_loss(a, a, 2.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(image_loss(a, a, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(image_loss(a, b, 2.0) == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(image_loss(a, b, 1.0) == doctest::Approx(0.5).epsilon(1e-4));
  CHECK_THROWS_AS(image_loss(Mat3c(0, 3), Mat3c(0, 3), 2.0), std::invalid_argument);
}

TEST_CASE("image loss equals MSE exactly at p = 2 and is continuous in p") {
  Rng rng(5);
  Mat3c a(10, 3), b(10, 3);
  for (int i = 0; i < 10; ++i)
    for (int c = 0; c < 3; ++c) {
      a(i, c) = rng.uniform();
      b(i, c) = rng.uniform();
    }
  double mse = (a - b).array().square().rowwise().sum().mean();
  CHECK(image_loss(a, b, 2.0) == mse);

  double prev = image_loss(a, b, 1.0);
  for (double p = 1.0; p <= 2.0; p += 0.01) {
    double cur = image_loss(a, b, p);
    CHECK(std::abs(cur - prev) < 0.05);  // no jumps
    prev = cur;
  }
}

TEST_CASE("p-norm schedule shape") {
  PNormSchedule sched(100, 250, 400);
  CHECK(sched(0) == 2.0);
  CHECK(sched(100) == 1.0);
  CHECK(sched(250) == 1.0);
  CHECK(sched(400) == 2.0);
  CHECK(sched(1000) == 2.0);
  CHECK(sched((250 + 400) / 2.0) == doctest::Approx(1.5));
  // continuity and range
  double prev = sched(0);
  for (int tau = 1; tau <= 500; ++tau) {
    double cur = sched(double(tau));
    CHECK(cur >= 1.0);
    CHECK(cur <= 2.0);
    CHECK(std::abs(cur - prev) < 0.02);
    prev = cur;
  }
  CHECK_THROWS_AS(PNormSchedule(0, 5, 10), std::invalid_argument);
  CHECK_THROWS_AS(PNormSchedule(5, 4, 10), std::invalid_argument);
  CHECK_THROWS_AS(PNormSchedule(2, 10, 10), std::invalid_argument);
}

TEST_CASE("camera pair weighting") {
  Camera a = look_at_camera(0, Vec3(0, 0, 2), Vec3::Zero());
  Camera b = look_at_camera(1, Vec3(0, 0, 2), Vec3(0.5, 0, 0));  // same origin
  CHECK(camera_weight(a, b, 1.0) == 0.0);

  Camera c = look_at_camera(2, Vec3(1, 0, 2), Vec3(1, 0, 0));  // parallel axes
  CHECK(camera_weight(a, c, 1.0) == doctest::Approx(0.0).epsilon(1e-9));

  Camera d = look_at_camera(3, Vec3(2, 0, 0), Vec3::Zero());
  double w_max = max_camera_weight({a, b, c, d});
  // the maximizing pair achieves exactly 1
  double best = 0.0;
  std::vector<Camera> cams = {a, b, c, d};
  for (size_t i = 0; i < cams.size(); ++i)
    for (size_t j = 0; j < cams.size(); ++j)
      if (i != j) best = std::max(best, camera_weight(cams[i], cams[j], w_max));
  CHECK(best == doctest::Approx(1.0).epsilon(1e-12));
  // symmetry
  CHECK(camera_weight(a, d, w_max) == doctest::Approx(camera_weight(d, a, w_max)));
}

TEST_CASE("depth reprojection loss vanishes on an opaque diffuse plane") {
  // Hand-built field: opaque below z = 0, empty above.
  MlpConfig cfg;
  cfg.pos_levels = 0;
  cfg.dir_levels = 0;
  cfg.hidden = 4;
  cfg.depth = 2;
  cfg.color_hidden = 4;
  Mlp<double> mlp(cfg);
  auto& p = mlp.params();
  p.setZero();
  // layer offsets: L0 W(4x3)+b(4), L1 W(4x4)+b(4), sigma W(1x4)+b(1)
  // Eigen maps are column-major: W(i,j) at j*rows+i.
  auto W = [&](ptrdiff_t base, int rows, int i, int j) -> double& {
    return p[base + ptrdiff_t(j) * rows + i];
  };
  const double sharp = 500.0;
  W(0, 4, 0, 2) = -sharp;              // L0 unit0 = softplus(-sharp * z)
  ptrdiff_t l1 = 4 * 3 + 4;
  W(l1, 4, 0, 0) = 1.0;                // pass through
  ptrdiff_t ls = l1 + 4 * 4 + 4;
  W(ls, 1, 0, 0) = 50.0;
  p[ls + 4] = -50.0 * softplus(0.0) - 12.0;  // cancel the idle-unit offset

  Camera cam_i = look_at_camera(0, Vec3(0.05, 0.1, 1.0), Vec3(0, 0, 0));
  Camera cam_j = look_at_camera(1, Vec3(-0.3, 0.15, 0.95), Vec3(0.1, 0, 0));
  double w_max = max_camera_weight({cam_i, cam_j});

  RenderConfig rc;
  rc.near = 0.6;
  rc.far = 1.4;
  rc.n_coarse = 64;
  rc.n_fine = 0;
  BatchRenderer<double> renderer(mlp, rc);

  std::vector<Ray> rays;
  Rng prng(3);
  for (int i = 0; i < 16; ++i)
    rays.push_back(camera_ray(cam_i, Vec2(prng.uniform(2, 6), prng.uniform(2, 6))));

  LossConfig lc;
  lc.reproj_samples = 64;
  Rng rng(21);
  double loss = depth_reprojection_loss(renderer, rays, cam_i, cam_j, w_max, lc, rng);
  CHECK(loss >= 0.0);
  CHECK(loss <= 1e-4);
}

TEST_CASE("reprojection contribution arithmetic") {
  // cam_j renders depth 4 where the point sits at depth 3, w = 0.5:
  // contribution w * |4 - 3|^2 = 0.5
  double w = 0.5;
  double dj = 4.0, z = 3.0;
  CHECK(w * std::abs(dj - z) * std::abs(dj - z) == doctest::Approx(0.5));
}

TEST_CASE("depth reprojection matches a literal re-evaluation") {
  MlpConfig cfg;
  cfg.pos_levels = 2;
  cfg.dir_levels = 1;
  cfg.hidden = 12;
  cfg.depth = 2;
  cfg.color_hidden = 8;
  Mlp<double> mlp(cfg);
  Rng init(9);
  mlp.init(init);

  Camera cam_i = look_at_camera(0, Vec3(0, 0.2, 2), Vec3::Zero());
  Camera cam_j = look_at_camera(1, Vec3(1.3, -0.2, 1.5), Vec3::Zero());
  double w_max = max_camera_weight({cam_i, cam_j});
  double w = camera_weight(cam_i, cam_j, w_max);

  RenderConfig rc;
  rc.near = 0.4;
  rc.far = 3.2;
  rc.n_coarse = 12;
  rc.n_fine = 0;
  BatchRenderer<double> renderer(mlp, rc);

  std::vector<Ray> rays;
  Rng prng(4);
  for (int i = 0; i < 6; ++i)
    rays.push_back(camera_ray(cam_i, Vec2(prng.uniform(1, 7), prng.uniform(1, 7))));

  LossConfig lc;
  lc.reproj_samples = 12;
  const uint64_t seed = 77;
  Rng rng(seed);
  double loss = depth_reprojection_loss(renderer, rays, cam_i, cam_j, w_max, lc, rng);

  // Literal oracle: replays the sample draws, queries the MLP sample by
  // sample, and evaluates the formulas naively.
  Rng orng(seed);
  auto literal_depth = [&](const Ray& ray, const std::vector<double>& ts) {
    std::vector<double> sig;
    std::vector<Vec3> col;
    for (double t : ts) {
      typename Mlp<double>::Mat x(1, 3), d(1, 3);
      x.row(0) = (ray.origin + t * ray.direction).transpose();
      d.row(0) = ray.direction.transpose();
      typename Mlp<double>::Cache c;
      mlp.forward(x, d, c);
      sig.push_back(mlp.sigma(c)[0]);
      col.push_back(mlp.rgb(c).row(0).transpose());
    }
    return oracle::literal_quadrature(ts, sig, col, kLastDelta, Vec3::Zero()).depth;
  };
  auto draw = [&](double a, double b, int k) {
    std::vector<double> ts(k);
    double span = (b - a) / k;
    for (int i = 0; i < k; ++i) ts[i] = a + span * (i + orng.uniform());
    return ts;
  };

  std::vector<double> primary_depths;
  for (const Ray& r : rays)
    primary_depths.push_back(literal_depth(r, draw(rc.near, rc.far, rc.n_coarse)));
  double acc = 0.0;
  for (size_t i = 0; i < rays.size(); ++i) {
    Vec3 point = rays[i].origin + primary_depths[i] * rays[i].direction;
    if ((cam_j.rotation.transpose() * (point - cam_j.origin)).z() >= -1e-9) continue;
    Ray rj;
    rj.origin = cam_j.origin;
    rj.direction = (point - cam_j.origin).normalized();
    double dj = literal_depth(rj, draw(rc.near, rc.far, lc.reproj_samples));
    double z = (point - cam_j.origin).norm();
    acc += w * (dj - z) * (dj - z);
  }
  double literal = acc / double(rays.size());
  CHECK(std::abs(loss - literal) < 1e-8);
}
