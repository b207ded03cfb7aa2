#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nerfmd/field.hpp"
#include "nerfmd/trainer.hpp"
#include "oracles.hpp"

using namespace nerfmd;

namespace {

Camera tiny_camera(int id, const Vec3& origin, const Vec3& target) {
  Camera cam;
  cam.id = id;
  cam.width = 8;
  cam.height = 8;
  cam.focal = 8.0;
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

MlpConfig tiny_mlp_config() {
  MlpConfig cfg;
  cfg.pos_levels = 2;
  cfg.dir_levels = 1;
  cfg.hidden = 16;
  cfg.depth = 2;
  cfg.color_hidden = 8;
  return cfg;
}

}  // namespace

TEST_CASE("positional encoding layout") {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic> x(1, 3), out;
  SUBCASE("L = 0 keeps only identity features") {
    x << 0.3, -0.7, 1.1;
    encode_batch<double>(x, 0, out);
    REQUIRE(out.cols() == 3);
    CHECK(out(0, 0) == 0.3);
    CHECK(out(0, 2) == 1.1);
  }
  SUBCASE("x = 0 gives zero sines and unit cosines") {
    x.setZero();
    encode_batch<double>(x, 4, out);
    REQUIRE(out.cols() == 27);
    for (int l = 0; l < 4; ++l)
      for (int c = 0; c < 3; ++c) {
        CHECK(out(0, 3 + 6 * l + c) == 0.0);
        CHECK(out(0, 3 + 6 * l + 3 + c) == 1.0);
      }
  }
  SUBCASE("length for L = 6 is 39") {
    CHECK(encoding_dim(6) == 39);
  }
}

TEST_CASE("query through MLP is deterministic and constant at zero init") {
  MlpConfig cfg = tiny_mlp_config();
  Mlp<double> mlp(cfg);
  // zero-initialized output layer: sigma identical everywhere
  typename Mlp<double>::Mat x(3, 3), d(3, 3);
  x << 0.1, 0.2, 0.3, -1.0, 0.5, 0.2, 2.0, -2.0, 0.0;
  d << 0, 0, -1, 0, 0, -1, 1, 0, 0;
  typename Mlp<double>::Cache c;
  mlp.forward(x, d, c);
  auto sigma = mlp.sigma(c);
  CHECK(sigma[0] == doctest::Approx(kDensityScale * softplus(0.0)));
  CHECK(sigma[0] == sigma[1]);
  CHECK(sigma[1] == sigma[2]);

  Rng rng(5);
  mlp.init(rng);
  typename Mlp<double>::Cache c1, c2;
  mlp.forward(x, d, c1);
  mlp.forward(x, d, c2);
  CHECK(mlp.sigma(c1) == mlp.sigma(c2));  // bitwise determinism
  CHECK(mlp.rgb(c1) == mlp.rgb(c2));
  for (ptrdiff_t i = 0; i < mlp.sigma(c1).size(); ++i)
    CHECK(mlp.sigma(c1)[i] >= 0.0);
  CHECK(mlp.rgb(c1).minCoeff() >= 0.0);
  CHECK(mlp.rgb(c1).maxCoeff() <= 1.0);
}

TEST_CASE("sigma gradient w.r.t. every parameter matches central differences") {
  MlpConfig cfg = tiny_mlp_config();
  Mlp<double> mlp(cfg);
  Rng rng(42);
  mlp.init(rng);

  typename Mlp<double>::Mat x(2, 3), d(2, 3);
  x << 0.3, -0.4, 0.8, -0.2, 0.6, -0.9;
  d << 0, 0, -1, 1, 0, 0;

  typename Mlp<double>::Cache c;
  mlp.forward(x, d, c);
  typename Mlp<double>::Vec dsigma = Mlp<double>::Vec::Ones(2);
  typename Mlp<double>::Mat drgb = Mlp<double>::Mat::Zero(2, 3);
  typename Mlp<double>::Vec grad = Mlp<double>::Vec::Zero(mlp.param_count());
  mlp.backward(c, dsigma, drgb, grad);

  const double h = 1e-5;
  int bad = 0;
  for (ptrdiff_t i = 0; i < mlp.param_count(); ++i) {
    double orig = mlp.params()[i];
    auto eval = [&](double v) {
      mlp.params()[i] = v;
      typename Mlp<double>::Cache cc;
      mlp.forward(x, d, cc);
      mlp.params()[i] = orig;
      return mlp.sigma(cc).sum();
    };
    double fd = (eval(orig + h) - eval(orig - h)) / (2 * h);
    double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-4});
    if (std::abs(fd - grad[i]) / denom > 1e-3) ++bad;
  }
  CHECK(bad == 0);
}

TEST_CASE("stratified sampling") {
  Rng rng(1);
  auto s = sample_stratified(0.0, 1.0, 2, rng);
  CHECK(s.t.size() == 2);
  CHECK(s.t[0] >= 0.0);
  CHECK(s.t[0] < 0.5);
  CHECK(s.t[1] >= 0.5);
  CHECK(s.t[1] < 1.0);

  auto many = sample_stratified(2.0, 5.0, 64, rng);
  for (size_t i = 0; i < many.t.size(); ++i) {
    CHECK(many.t[i] >= 2.0);
    CHECK(many.t[i] < 5.0);
    if (i > 0) CHECK(many.t[i] > many.t[i - 1]);
  }
}

TEST_CASE("hierarchical sampling concentrates on heavy bins") {
  Rng rng(2);
  RaySamples<double> coarse;
  coarse.t = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> w = {0.0, 0.0, 1.0, 0.0, 0.0};  // mass in [0.5, 0.75]
  auto fine = sample_hierarchical(coarse, w, 100, rng, 1e-4);
  int inside = 0;
  int new_samples = 0;
  for (double t : fine.t) {
    bool is_coarse = false;
    for (double ct : coarse.t) is_coarse |= (t == ct);
    if (is_coarse) continue;
    ++new_samples;
    if (t >= 0.5 && t <= 0.75) ++inside;
  }
  CHECK(new_samples == 100);
  CHECK(inside >= 90);
}

TEST_CASE("hierarchical sampling with uniform weights is near-uniform (KS)") {
  Rng rng(3);
  RaySamples<double> coarse;
  for (int i = 0; i <= 16; ++i) coarse.t.push_back(i / 16.0);
  std::vector<double> w(coarse.t.size(), 1.0);
  std::vector<double> samples;
  for (int rep = 0; rep < 100; ++rep) {
    auto fine = sample_hierarchical(coarse, w, 100, rng, 0.0);
    for (double t : fine.t) samples.push_back(t);
  }
  std::sort(samples.begin(), samples.end());
  double ks = 0.0;
  for (size_t i = 0; i < samples.size(); ++i)
    ks = std::max(ks, std::abs((i + 1.0) / samples.size() - samples[i]));
  CHECK(ks < 0.1);
}

TEST_CASE("hierarchical sampling falls back to stratified on zero weights") {
  RaySamples<double> coarse;
  coarse.t = {0.0, 0.5, 1.0};
  std::vector<double> w = {0.0, 0.0, 0.0};
  Rng rng_a(9), rng_b(9);
  auto fine = sample_hierarchical(coarse, w, 8, rng_a, 1e-3);
  auto strat = sample_stratified(0.0, 1.0, 8, rng_b);
  REQUIRE(fine.t.size() == strat.t.size());
  for (size_t i = 0; i < fine.t.size(); ++i) CHECK(fine.t[i] == strat.t[i]);
}

TEST_CASE("composite_ray closed forms") {
  Eigen::Matrix<double, Eigen::Dynamic, 3> rgb(2, 3);
  rgb << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0;

  SUBCASE("vacuum renders nothing") {
    std::vector<double> ts = {0.5, 1.5};
    double sigma[2] = {0.0, 0.0};
    auto r = composite_ray<double>(ts, sigma, rgb, 0, 0.1, 2.0, Vec3::Zero());
    CHECK(r.color.norm() == 0.0);
    CHECK(r.weights[0] == 0.0);
    CHECK(r.weights[1] == 0.0);
    CHECK(r.transmittance_tail == 1.0);
  }

  SUBCASE("half absorption then opaque") {
    // K=2, sigma1 = ln 2 over delta = 1, sigma2 -> inf
    std::vector<double> ts = {1.0, 2.0};
    double sigma[2] = {std::log(2.0), 1e8};
    auto r = composite_ray<double>(ts, sigma, rgb, 0, 0.1, 3.0, Vec3::Zero());
    Vec3 expect = 0.5 * rgb.row(0).transpose() + 0.5 * rgb.row(1).transpose();
    CHECK((r.color - expect).norm() < 1e-9);
  }

  SUBCASE("single opaque sample gives delta absorption") {
    std::vector<double> ts = {1.7};
    double sigma[1] = {1e8};
    Eigen::Matrix<double, Eigen::Dynamic, 3> c1(1, 3);
    c1 << 0.3, 0.3, 0.3;
    auto r = composite_ray<double>(ts, sigma, c1, 0, 0.1, 3.0, Vec3::Zero());
    CHECK(r.depth == doctest::Approx(1.7).epsilon(1e-12));
    CHECK(r.depth_variance < 1e-12);
  }
}

TEST_CASE("render matches a literal re-implementation of the quadrature") {
  MlpConfig cfg = tiny_mlp_config();
  Mlp<double> mlp(cfg);
  Rng rng(101);
  mlp.init(rng);
  RenderConfig rc;
  rc.near = 0.2;
  rc.far = 3.0;
  rc.n_coarse = 16;
  rc.n_fine = 0;
  BatchRenderer<double> renderer(mlp, rc);

  Camera cam = tiny_camera(0, Vec3(0, 0, 2), Vec3::Zero());
  std::vector<Ray> rays;
  for (int i = 0; i < 50; ++i)
    rays.push_back(camera_ray(cam, Vec2(rng.uniform(0, 8), rng.uniform(0, 8))));

  BatchRenderer<double>::Batch b;
  renderer.render_hierarchical(rays, rng, b);

  for (size_t i = 0; i < rays.size(); ++i) {
    // independent path: query the MLP per sample, then literal formulas
    std::vector<double> sig;
    std::vector<Vec3> col;
    for (double t : b.samples[i].t) {
      typename Mlp<double>::Mat x(1, 3), d(1, 3);
      x.row(0) = (rays[i].origin + t * rays[i].direction).transpose();
      d.row(0) = rays[i].direction.transpose();
      typename Mlp<double>::Cache c;
      mlp.forward(x, d, c);
      sig.push_back(mlp.sigma(c)[0]);
      col.push_back(mlp.rgb(c).row(0).transpose());
    }
    auto lit = oracle::literal_quadrature(b.samples[i].t, sig, col, kLastDelta,
                                          rc.background);
    CHECK((b.results[i].color - lit.color).norm() < 1e-10);
    CHECK(std::abs(b.results[i].depth_raw - lit.depth) < 1e-10);
    CHECK(std::abs(b.results[i].depth_variance - lit.variance) < 1e-10);
  }
}

TEST_CASE("per-ray weight normalization and transmittance monotonicity") {
  MlpConfig cfg = tiny_mlp_config();
  Mlp<double> mlp(cfg);
  Rng rng(55);
  mlp.init(rng);
  RenderConfig rc;
  rc.n_coarse = 24;
  rc.n_fine = 8;
  BatchRenderer<double> renderer(mlp, rc);
  Camera cam = tiny_camera(0, Vec3(0, 0, 2), Vec3::Zero());
  std::vector<Ray> rays;
  for (int i = 0; i < 20; ++i)
    rays.push_back(camera_ray(cam, Vec2(rng.uniform(0, 8), rng.uniform(0, 8))));
  BatchRenderer<double>::Batch b;
  renderer.render_hierarchical(rays, rng, b);
  for (const auto& res : b.results) {
    double sum = res.transmittance_tail;
    double prev_w_plus_tail = 0.0;
    (void)prev_w_plus_tail;
    for (double w : res.weights) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(res.depth >= rc.near);
    CHECK(res.depth <= rc.far);
    const auto& ts = b.samples[&res - b.results.data()].t;
    double span = ts.back() - ts.front();
    CHECK(res.depth_variance <= span * span / 4.0 + 1e-9);
  }
}

TEST_CASE("composite loss gradient matches central differences on 5 rays") {
  MlpConfig cfg = tiny_mlp_config();
  Mlp<double> mlp(cfg);
  Rng init_rng(77);
  mlp.init(init_rng);

  RenderConfig rc;
  rc.near = 0.3;
  rc.far = 3.5;
  rc.n_coarse = 8;
  rc.n_fine = 0;  // sample positions independent of parameters
  BatchRenderer<double> renderer(mlp, rc);

  Camera cam_i = tiny_camera(0, Vec3(0, 0.2, 2), Vec3::Zero());
  Camera cam_j = tiny_camera(1, Vec3(1.5, -0.1, 1.4), Vec3::Zero());
  double w_max = max_camera_weight({cam_i, cam_j});

  std::vector<Ray> rays;
  Rng pix_rng(5);
  Eigen::Matrix<double, Eigen::Dynamic, 3> targets(5, 3);
  for (int i = 0; i < 5; ++i) {
    rays.push_back(camera_ray(cam_i, Vec2(pix_rng.uniform(1, 7), pix_rng.uniform(1, 7))));
    targets.row(i) = Vec3(pix_rng.uniform(), pix_rng.uniform(), pix_rng.uniform());
  }

  LossConfig lc;
  lc.p = 1.6;
  lc.lambda_depth = 0.05;
  lc.reproj_samples = 8;

  auto eval_loss = [&](uint64_t seed) {
    Rng rng(seed);
    typename Mlp<double>::Vec g = Mlp<double>::Vec::Zero(mlp.param_count());
    LossReport r = loss_gradients(renderer, rays, targets, cam_i, &cam_j, w_max,
                                  lc, rng, g);
    return std::make_pair(r.total, g);
  };

  auto [loss0, grad] = eval_loss(900);

  const double h = 1e-5;
  int bad = 0;
  double worst = 0.0;
  for (ptrdiff_t i = 0; i < mlp.param_count(); ++i) {
    double orig = mlp.params()[i];
    mlp.params()[i] = orig + h;
    double lp = eval_loss(900).first;
    mlp.params()[i] = orig - h;
    double lm = eval_loss(900).first;
    mlp.params()[i] = orig;
    double fd = (lp - lm) / (2 * h);
    double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-5});
    double rel = std::abs(fd - grad[i]) / denom;
    worst = std::max(worst, rel);
    if (rel > 1e-3) ++bad;
  }
  INFO("worst relative error ", worst);
  CHECK(bad == 0);
}

TEST_CASE("zero-residual batch has zero gradient at p = 2") {
  MlpConfig cfg = tiny_mlp_config();
  Mlp<double> mlp(cfg);
  Rng init_rng(31);
  mlp.init(init_rng);
  RenderConfig rc;
  rc.n_coarse = 8;
  rc.n_fine = 0;
  BatchRenderer<double> renderer(mlp, rc);
  Camera cam = tiny_camera(0, Vec3(0, 0, 2), Vec3::Zero());
  std::vector<Ray> rays = {camera_ray(cam, Vec2(3, 3)), camera_ray(cam, Vec2(5, 4))};

  // first render to find the exact outputs, then use them as targets
  Rng rng_a(4);
  BatchRenderer<double>::Batch b;
  std::vector<RaySamples<double>> samples;
  for (size_t i = 0; i < rays.size(); ++i)
    samples.push_back(sample_stratified(rc.near, rc.far, rc.n_coarse, rng_a));
  renderer.render(rays, samples, b);
  Eigen::Matrix<double, Eigen::Dynamic, 3> targets(2, 3);
  for (int i = 0; i < 2; ++i) targets.row(i) = b.results[i].color.transpose();

  LossConfig lc;
  lc.p = 2.0;
  lc.use_depth_loss = false;
  Rng rng_b(4);
  typename Mlp<double>::Vec g = Mlp<double>::Vec::Zero(mlp.param_count());
  LossReport r = loss_gradients(renderer, rays, targets, cam, nullptr, 1.0, lc,
                                rng_b, g);
  CHECK(r.image_loss < 1e-15);
  CHECK(g.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("duplicating the batch leaves the mean gradient unchanged") {
  MlpConfig cfg = tiny_mlp_config();
  Mlp<double> mlp(cfg);
  Rng init_rng(63);
  mlp.init(init_rng);
  RenderConfig rc;
  rc.n_coarse = 8;
  rc.n_fine = 0;
  BatchRenderer<double> renderer(mlp, rc);
  Camera cam = tiny_camera(0, Vec3(0, 0, 2), Vec3::Zero());

  std::vector<Ray> rays = {camera_ray(cam, Vec2(2, 6)), camera_ray(cam, Vec2(6, 2))};
  Eigen::Matrix<double, Eigen::Dynamic, 3> targets(2, 3);
  targets << 0.2, 0.4, 0.6, 0.9, 0.1, 0.3;

  // identical sample positions for original and duplicate
  auto run = [&](const std::vector<Ray>& rr,
                 const Eigen::Matrix<double, Eigen::Dynamic, 3>& tt) {
    std::vector<RaySamples<double>> samples;
    Rng srng(12);
    auto base0 = sample_stratified(rc.near, rc.far, rc.n_coarse, srng);
    auto base1 = sample_stratified(rc.near, rc.far, rc.n_coarse, srng);
    for (size_t i = 0; i < rr.size(); ++i)
      samples.push_back(i % 2 == 0 ? base0 : base1);
    BatchRenderer<double>::Batch b;
    renderer.render(rr, samples, b);
    Eigen::Matrix<double, Eigen::Dynamic, 3> rendered(int(rr.size()), 3);
    for (size_t i = 0; i < rr.size(); ++i)
      rendered.row(int(i)) = b.results[i].color.transpose();
    auto dc = image_loss_grad(rendered, tt, 2.0);
    typename Mlp<double>::Vec g = Mlp<double>::Vec::Zero(mlp.param_count());
    typename Mlp<double>::Vec dd = Mlp<double>::Vec::Zero(int(rr.size()));
    renderer.backward(b, dc, dd, g);
    return g;
  };

  auto g1 = run(rays, targets);
  std::vector<Ray> rays2 = {rays[0], rays[1], rays[0], rays[1]};
  Eigen::Matrix<double, Eigen::Dynamic, 3> targets2(4, 3);
  targets2 << targets, targets;
  auto g2 = run(rays2, targets2);
  CHECK((g1 - g2).cwiseAbs().maxCoeff() < 1e-9);
}
