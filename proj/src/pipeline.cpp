#include "nerfmd/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "nerfmd/checkpoint.hpp"
#include "nerfmd/detect.hpp"
#include "nerfmd/generator.hpp"
#include "nerfmd/image_io.hpp"
#include "nerfmd/reflect.hpp"
#include "nerfmd/scoring.hpp"
#include "nerfmd/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nerfmd {

namespace {

// substream tags, one per consumer of a stage seed
constexpr uint64_t kTagInit = 0x494e4954;    // field init
constexpr uint64_t kTagTrain = 0x5452414e;   // training batches
constexpr uint64_t kTagMaps = 0x4d415053;    // per-view map renders

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

std::string view_stem(const Frame& frame) {
  return fs::path(frame.image).stem().string();
}

MlpConfig mlp_config(const PipelineConfig& cfg) {
  MlpConfig mc;
  mc.pos_levels = cfg.field_pos_levels;
  mc.dir_levels = cfg.field_dir_levels;
  mc.hidden = cfg.field_hidden;
  mc.depth = cfg.field_depth;
  mc.color_hidden = cfg.field_color_hidden;
  return mc;
}

RenderConfig render_config(const PipelineConfig& cfg) {
  RenderConfig rc;
  rc.near = cfg.near;
  rc.far = cfg.far;
  rc.n_coarse = cfg.n_coarse;
  rc.n_fine = cfg.n_fine;
  return rc;
}

Eigen::Matrix<float, Eigen::Dynamic, 3> image_as_rows(const ImageBuffer& img) {
  Eigen::Matrix<float, Eigen::Dynamic, 3> m(ptrdiff_t(img.width) * img.height, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        m(ptrdiff_t(y) * img.width + x, c) =
            float(img.at(x, y, img.channels == 3 ? c : 0));
  return m;
}

struct ViewMaps {
  ImageBuffer color, depth, variance;
};

// Full-view render with hierarchical sampling (training-quality depth).
ViewMaps render_view_hier(const BatchRenderer<float>& renderer,
                          const Camera& cam, Rng& rng) {
  ViewMaps out;
  out.color = ImageBuffer(cam.width, cam.height, 3);
  out.depth = ImageBuffer(cam.width, cam.height, 1);
  out.variance = ImageBuffer(cam.width, cam.height, 1);
  const int rows_per_chunk = 6;
  typename BatchRenderer<float>::Batch batch;
  for (int y0 = 0; y0 < cam.height; y0 += rows_per_chunk) {
    int y1 = std::min(cam.height, y0 + rows_per_chunk);
    std::vector<Ray> rays;
    rays.reserve(size_t(cam.width) * (y1 - y0));
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < cam.width; ++x)
        rays.push_back(camera_ray(cam, Vec2(x + 0.5, y + 0.5)));
    renderer.render_hierarchical(rays, rng, batch);
    int i = 0;
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < cam.width; ++x, ++i) {
        const auto& res = batch.results[i];
        for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = double(res.color[c]);
        out.depth.at(x, y) = double(res.depth);
        out.variance.at(x, y) = double(res.depth_variance);
      }
  }
  return out;
}

// Deterministic midpoint-sampled render with the blended reflection model.
ImageBuffer render_view_blend(const Mlp<float>& field, const RenderConfig& rc,
                              const ReflectConfig& fc,
                              const std::vector<MirrorPrimitive>& prims,
                              const Camera& cam) {
  Stage2Renderer<float> renderer(field, rc, fc, prims);
  ImageBuffer out(cam.width, cam.height, 3);
  const int rows_per_chunk = 6;
  typename Stage2Renderer<float>::Forward f;
  for (int y0 = 0; y0 < cam.height; y0 += rows_per_chunk) {
    int y1 = std::min(cam.height, y0 + rows_per_chunk);
    std::vector<Ray> rays;
    rays.reserve(size_t(cam.width) * (y1 - y0));
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < cam.width; ++x)
        rays.push_back(camera_ray(cam, Vec2(x + 0.5, y + 0.5)));
    renderer.render(rays, cam, nullptr, f);
    int i = 0;
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < cam.width; ++x, ++i)
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = double(f.colors(i, c));
  }
  return out;
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("pipeline: cannot open " + path.string());
  return json::parse(f);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("pipeline: cannot write " + path.string());
  f << j.dump(2) << "\n";
}

struct RunContext {
  PipelineConfig cfg;
  std::string data_dir;
  Dataset ds;
};

RunContext load_run(const std::string& run_dir) {
  RunContext ctx;
  ctx.cfg = PipelineConfig::load((fs::path(run_dir) / "config.toml").string());
  json run = read_json(fs::path(run_dir) / "run.json");
  ctx.data_dir = run.at("data").get<std::string>();
  if (run.at("config_hash").get<std::string>() != hash_hex(ctx.cfg.hash()))
    throw std::runtime_error("pipeline: run.json does not match config.toml");
  ctx.ds = Dataset::load(ctx.data_dir);
  return ctx;
}

void require_hash(const std::string& what, const std::string& got,
                  uint64_t expected) {
  if (got != hash_hex(expected))
    throw std::runtime_error("pipeline: refusing to use " + what +
                             ": it was produced under a different "
                             "configuration (hash " + got + " vs " +
                             hash_hex(expected) + ")");
}

std::vector<Camera> train_cameras(const Dataset& ds) {
  std::vector<Camera> cams;
  for (int i : ds.split_indices("train")) cams.push_back(ds.frames[i].camera);
  return cams;
}

std::vector<MirrorPrimitive> load_primitives(const fs::path& path,
                                             uint64_t expected_hash,
                                             bool accepted_only) {
  json j = read_json(path);
  require_hash(path.filename().string(), j.at("config_hash").get<std::string>(),
               expected_hash);
  std::vector<MirrorPrimitive> prims;
  for (const json& pj : j.at("primitives")) {
    if (accepted_only && !pj.value("accepted", false)) continue;
    prims.push_back(primitive_from_json(pj));
  }
  return prims;
}

double wall_seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// Appends {key: seconds} to the run's timing file. Timings are kept out of
// every other artifact so reports stay byte-identical across reruns.
void record_timing(const std::string& run_dir, const std::string& key,
                   double seconds) {
  fs::path path = fs::path(run_dir) / "timings.json";
  json j = fs::exists(path) ? read_json(path) : json::object();
  j[key] = seconds;
  write_json(path, j);
}

}  // namespace

RunLock::RunLock(const std::string& run_dir) {
  fs::create_directories(run_dir);
  path_ = (fs::path(run_dir) / ".lock").string();
  FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f)
    throw std::runtime_error(
        "pipeline: " + path_ +
        " exists; another process owns this run directory (delete the file "
        "if the owner crashed)");
  std::fclose(f);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= double(a.data.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, -10.0 * std::log10(mse));
}

double psnr_masked(const ImageBuffer& a, const ImageBuffer& b,
                   const ImageBuffer& mask) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  if (mask.width != a.width || mask.height != a.height)
    throw std::invalid_argument("psnr: mask shape mismatch");
  double mse = 0.0;
  ptrdiff_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (mask.at(x, y) <= 0.5) continue;
      for (int c = 0; c < a.channels; ++c) {
        double d = a.at(x, y, c) - b.at(x, y, c);
        mse += d * d;
        ++n;
      }
    }
  if (n == 0) return 99.0;
  mse /= double(n);
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, -10.0 * std::log10(mse));
}

double mean_ssim(const ImageBuffer& a, const ImageBuffer& b) {
  ImageBuffer map = ssim_map(a, b);
  double acc = 0.0;
  for (double v : map.data) acc += v;
  return acc / double(map.data.size());
}

void run_generate(const PipelineConfig& cfg, uint64_t seed,
                  const std::string& out_dir) {
  generate_scene(cfg, seed, out_dir);
}

void run_stage1(const PipelineConfig& cfg, const std::string& data_dir,
                const std::string& run_dir) {
  auto t0 = std::chrono::steady_clock::now();
  RunLock lock(run_dir);

  {
    std::ofstream f(fs::path(run_dir) / "config.toml");
    if (!f) throw std::runtime_error("pipeline: cannot write config.toml");
    f << cfg.canonical();
  }
  json run;
  run["data"] = data_dir;
  run["config_hash"] = hash_hex(cfg.hash());
  write_json(fs::path(run_dir) / "run.json", run);

  Dataset ds = Dataset::load(data_dir);
  std::vector<int> train_idx = ds.split_indices("train");
  if (train_idx.empty())
    throw std::runtime_error("pipeline: dataset has no training views");

  std::vector<Camera> cams;
  std::vector<ImageBuffer> images;
  std::vector<Eigen::Matrix<float, Eigen::Dynamic, 3>> targets;
  std::vector<ImageBuffer> depths;
  bool have_depth = true;
  for (int i : train_idx) {
    cams.push_back(ds.frames[i].camera);
    images.push_back(ds.load_image(ds.frames[i]));
    targets.push_back(image_as_rows(images.back()));
    if (ds.frames[i].depth.empty())
      have_depth = false;
    else if (have_depth)
      depths.push_back(ds.load_depth(ds.frames[i]));
  }
  if (!have_depth) depths.clear();
  const int n_train = int(train_idx.size());
  const double w_max = max_camera_weight(cams);

  Mlp<float> field(mlp_config(cfg));
  {
    Rng init_rng(Rng::mix(cfg.stage1_seed, kTagInit));
    field.init(init_rng);
  }
  RenderConfig rc = render_config(cfg);
  BatchRenderer<float> renderer(field, rc);
  Adam<float> opt(field.param_count(), cfg.stage1_lr_init, cfg.stage1_lr_final,
                  cfg.stage1_iterations);

  LossConfig lc;
  lc.p = 2.0;
  lc.lambda_depth = cfg.lambda_depth;
  lc.lambda_var = cfg.lambda_var;
  lc.lambda_gt = have_depth ? cfg.lambda_gt : 0.0;
  lc.reproj_samples = cfg.n_coarse;

  std::ofstream csv(fs::path(run_dir) / "stage1_loss.csv");
  csv << "iteration,image_loss,depth_loss,total\n";

  Rng rng(Rng::mix(cfg.stage1_seed, kTagTrain));
  typename Mlp<float>::Vec grad;
  char row[160];
  for (int it = 0; it < cfg.stage1_iterations; ++it) {
    int ci = int(rng.uniform_int(n_train));
    int cj = n_train > 1 ? int(rng.uniform_int(n_train - 1)) : ci;
    if (n_train > 1 && cj >= ci) ++cj;
    const Camera& cam = cams[ci];

    std::vector<Ray> rays(cfg.stage1_batch_rays);
    Eigen::Matrix<float, Eigen::Dynamic, 3> batch_t(cfg.stage1_batch_rays, 3);
    Eigen::VectorXf batch_d(cfg.stage1_batch_rays);
    for (int b = 0; b < cfg.stage1_batch_rays; ++b) {
      int pix = int(rng.uniform_int(uint64_t(cam.width) * cam.height));
      int x = pix % cam.width, y = pix / cam.width;
      rays[b] = camera_ray(cam, Vec2(x + 0.5, y + 0.5));
      batch_t.row(b) = targets[ci].row(ptrdiff_t(y) * cam.width + x);
      if (lc.lambda_gt > 0.0) batch_d[b] = float(depths[ci].at(x, y));
    }

    grad.setZero(field.param_count());
    LossReport rep =
        loss_gradients(renderer, rays, batch_t, cam,
                       n_train > 1 ? &cams[cj] : nullptr, w_max, lc, rng, grad,
                       lc.lambda_gt > 0.0 ? &batch_d : nullptr);
    opt.update(field.params(), grad);

    std::snprintf(row, sizeof(row), "%d,%.9e,%.9e,%.9e\n", it, rep.image_loss,
                  rep.depth_loss, rep.total);
    csv << row;
  }
  csv.close();

  Checkpoint::from_field(field, uint32_t(cfg.stage1_iterations), cfg.hash())
      .save((fs::path(run_dir) / "stage1.ckpt").string());

  // per-view maps for scoring and detection
  fs::path maps_dir = fs::path(run_dir) / "maps";
  fs::create_directories(maps_dir);
  const double c = cfg.effective_score_c();
  json summary;
  summary["config_hash"] = hash_hex(cfg.hash());
  summary["iterations"] = cfg.stage1_iterations;
  json psnrs = json::array();
  double psnr_acc = 0.0;
  for (int v = 0; v < n_train; ++v) {
    const Frame& frame = ds.frames[train_idx[v]];
    Rng map_rng(Rng::mix(cfg.stage1_seed, Rng::mix(kTagMaps, uint64_t(v))));
    ViewMaps m = render_view_hier(renderer, frame.camera, map_rng);
    ImageBuffer ssim = ssim_map(m.color, images[v]);
    ImageBuffer score = score_map(ssim, m.variance, c);

    std::string stem = view_stem(frame);
    write_png8((maps_dir / (stem + "_color.png")).string(), m.color);
    write_raw_f32((maps_dir / (stem + "_depth.f32")).string(), m.depth);
    write_raw_f32((maps_dir / (stem + "_var.f32")).string(), m.variance);
    write_raw_f32((maps_dir / (stem + "_ssim.f32")).string(), ssim);
    write_raw_f32((maps_dir / (stem + "_score.f32")).string(), score);
    write_png8((maps_dir / (stem + "_score.png")).string(), score);
    ImageBuffer depth_vis = m.depth;
    for (double& d : depth_vis.data) d /= cfg.far;
    write_png16((maps_dir / (stem + "_depth.png")).string(), depth_vis);

    double p = psnr(m.color, images[v]);
    psnrs.push_back(p);
    psnr_acc += p;
  }
  summary["train_psnr"] = psnrs;
  summary["train_psnr_mean"] = psnr_acc / n_train;
  write_json(fs::path(run_dir) / "stage1.json", summary);

  json scoring;
  scoring["config_hash"] = hash_hex(cfg.hash());
  scoring["c"] = c;
  scoring["threshold"] = cfg.score_threshold;
  SsimWindow win;
  scoring["window"] = {{"radius", win.radius},
                       {"sigma", win.sigma},
                       {"c1", win.c1},
                       {"c2", win.c2}};
  write_json(maps_dir / "scoring.json", scoring);

  record_timing(run_dir, "stage1_seconds", wall_seconds(t0));
}

void run_detect(const std::string& run_dir) {
  auto t0 = std::chrono::steady_clock::now();
  RunLock lock(run_dir);
  RunContext ctx = load_run(run_dir);
  const PipelineConfig& cfg = ctx.cfg;
  fs::path maps_dir = fs::path(run_dir) / "maps";

  std::vector<int> train_idx = ctx.ds.split_indices("train");
  std::vector<std::pair<Camera, ScoreMaps>> views;
  for (int i : train_idx) {
    const Frame& frame = ctx.ds.frames[i];
    std::string stem = view_stem(frame);
    ScoreMaps sm;
    sm.depth = read_raw_f32((maps_dir / (stem + "_depth.f32")).string(),
                            frame.camera.width, frame.camera.height);
    sm.depth_variance = read_raw_f32((maps_dir / (stem + "_var.f32")).string(),
                                     frame.camera.width, frame.camera.height);
    sm.ssim = read_raw_f32((maps_dir / (stem + "_ssim.f32")).string(),
                           frame.camera.width, frame.camera.height);
    sm.score = read_raw_f32((maps_dir / (stem + "_score.f32")).string(),
                            frame.camera.width, frame.camera.height);
    views.emplace_back(frame.camera, std::move(sm));
  }

  CandidateCloud cloud = build_candidate_cloud(views, cfg.score_threshold);

  // keep only the best-scoring candidates so detection cost stays bounded
  if (int(cloud.size()) > cfg.max_candidates) {
    std::vector<int> order(cloud.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return cloud.scores[a] > cloud.scores[b];
    });
    order.resize(cfg.max_candidates);
    std::sort(order.begin(), order.end());
    CandidateCloud kept;
    for (int i : order) {
      kept.points.push_back(cloud.points[i]);
      kept.camera_ids.push_back(cloud.camera_ids[i]);
      kept.scores.push_back(cloud.scores[i]);
    }
    cloud = std::move(kept);
  }

  json out;
  out["config_hash"] = hash_hex(cfg.hash());
  out["cloud_size"] = cloud.size();
  json prims = json::array();

  if (cloud.size() >= 3) {
    std::vector<Camera> cams = train_cameras(ctx.ds);
    cloud = estimate_normals(std::move(cloud),
                             cfg.normal_radius_frac * ctx.ds.diameter,
                             cfg.normal_knn, cams);
    std::vector<int> labels = segment_kmeans(cloud, cfg.detect_k, cfg.detect_seed);
    int k_eff = 0;
    for (int l : labels) k_eff = std::max(k_eff, l + 1);

    DetectConfig dc;
    dc.score_threshold = cfg.score_threshold;
    dc.normal_radius = cfg.normal_radius_frac * ctx.ds.diameter;
    dc.normal_knn = cfg.normal_knn;
    dc.kmeans_k = cfg.detect_k;
    dc.ransac_iters = cfg.ransac_iters;
    dc.tau_d = cfg.tau_frac * ctx.ds.diameter;
    dc.min_inlier_ratio = cfg.min_inlier_ratio;
    dc.min_normal_similarity = cfg.min_normal_similarity;
    dc.bitmap_cell_frac = cfg.bitmap_cell_frac;
    dc.bitmap_rho = cfg.bitmap_rho;

    for (int cl = 0; cl < k_eff; ++cl) {
      std::vector<int> subset;
      for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == cl) subset.push_back(int(i));
      if (int(subset.size()) < 3) continue;
      dc.seed = Rng::mix(cfg.detect_seed, uint64_t(cl));
      FittedPrimitive fit = fit_primitive_ransac(cloud, subset, dc);
      json pj = primitive_to_json(fit.primitive);
      pj["cluster"] = cl;
      pj["cluster_size"] = subset.size();
      pj["accepted"] = fit.accepted;
      pj["inliers"] = fit.inlier_indices.size();
      pj["metrics"] = {{"inlier_ratio", fit.metrics.inlier_ratio},
                       {"mean_distance", fit.metrics.mean_distance},
                       {"normal_similarity", fit.metrics.normal_similarity}};
      prims.push_back(pj);
    }
  }
  out["primitives"] = prims;
  write_json(fs::path(run_dir) / "primitives.json", out);
  write_cloud_ply((fs::path(run_dir) / "cloud.ply").string(), cloud);
  record_timing(run_dir, "detect_seconds", wall_seconds(t0));
}

void run_stage2(const std::string& run_dir) {
  auto t0 = std::chrono::steady_clock::now();
  RunLock lock(run_dir);
  RunContext ctx = load_run(run_dir);
  const PipelineConfig& cfg = ctx.cfg;

  Checkpoint ck = Checkpoint::load((fs::path(run_dir) / "stage1.ckpt").string());
  require_hash("stage1.ckpt", hash_hex(ck.config_hash), cfg.hash());
  Mlp<float> field(mlp_config(cfg));
  ck.to_field(field);

  std::vector<MirrorPrimitive> prims = load_primitives(
      fs::path(run_dir) / "primitives.json", cfg.hash(), /*accepted_only=*/true);

  std::vector<int> train_idx = ctx.ds.split_indices("train");
  std::vector<Camera> cams;
  std::vector<Eigen::Matrix<float, Eigen::Dynamic, 3>> targets;
  for (int i : train_idx) {
    cams.push_back(ctx.ds.frames[i].camera);
    targets.push_back(image_as_rows(ctx.ds.load_image(ctx.ds.frames[i])));
  }
  const int n_train = int(cams.size());

  Adam<float> field_opt(field.param_count(), cfg.stage2_lr_init,
                        cfg.stage2_lr_final, cfg.stage2_iterations);
  Stage2State<float> st;
  st.mlp = &field;
  st.field_opt = &field_opt;
  st.primitives = prims;
  for (size_t i = 0; i < prims.size(); ++i)
    st.prim_opts.emplace_back(detail::kRectParamCount,
                              cfg.stage2_lr_init * cfg.prim_lr_scale,
                              cfg.stage2_lr_final * cfg.prim_lr_scale,
                              cfg.stage2_iterations);
  st.schedule = PNormSchedule(cfg.tau_init, cfg.tau_inc, cfg.tau_std);
  st.render_cfg = render_config(cfg);
  st.reflect_cfg.bounce_limit = cfg.bounce_limit;

  std::ofstream csv(fs::path(run_dir) / "stage2_loss.csv");
  csv << "iteration,p,image_loss\n";
  Rng rng(Rng::mix(cfg.stage2_seed, kTagTrain));
  char row[128];
  for (int it = 0; it < cfg.stage2_iterations; ++it) {
    int ci = int(rng.uniform_int(n_train));
    const Camera& cam = cams[ci];
    std::vector<Ray> rays(cfg.stage2_batch_rays);
    Eigen::Matrix<float, Eigen::Dynamic, 3> batch_t(cfg.stage2_batch_rays, 3);
    for (int b = 0; b < cfg.stage2_batch_rays; ++b) {
      int pix = int(rng.uniform_int(uint64_t(cam.width) * cam.height));
      int x = pix % cam.width, y = pix / cam.width;
      rays[b] = camera_ray(cam, Vec2(x + 0.5, y + 0.5));
      batch_t.row(b) = targets[ci].row(ptrdiff_t(y) * cam.width + x);
    }
    LossReport rep = stage2_train_step(st, rays, batch_t, cam, rng);
    std::snprintf(row, sizeof(row), "%d,%.3f,%.9e\n", it, rep.p_used,
                  rep.image_loss);
    csv << row;
  }
  csv.close();

  Checkpoint::from_field(field, uint32_t(cfg.stage2_iterations), cfg.hash())
      .save((fs::path(run_dir) / "stage2.ckpt").string());

  // Safety check: mirror compositing must not hurt the overall reconstruction.
  // A bad primitive (e.g. a grossly wrong detection the refinement could not
  // recover from) would bend rays that should have gone straight. Compare the
  // blended render against the plain field on a subset of training views and
  // disable the primitives when blending loses; eval then falls back to the
  // refined field alone.
  bool keep_prims = true;
  if (!st.primitives.empty()) {
    RenderConfig rc = render_config(cfg);
    ReflectConfig fc;
    fc.bounce_limit = cfg.bounce_limit;
    double blended_acc = 0.0, plain_acc = 0.0;
    int nv = 0;
    for (int v = 0; v < n_train; v += 3) {
      ImageBuffer gt = ctx.ds.load_image(ctx.ds.frames[train_idx[v]]);
      ImageBuffer blended =
          render_view_blend(field, rc, fc, st.primitives, cams[v]);
      ImageBuffer plain = render_view_blend(field, rc, fc, {}, cams[v]);
      blended_acc += psnr(blended, gt);
      plain_acc += psnr(plain, gt);
      ++nv;
    }
    keep_prims = blended_acc >= plain_acc - 0.1 * nv;
  }

  json refined;
  refined["config_hash"] = hash_hex(cfg.hash());
  refined["primitives_active"] = keep_prims;
  json pj = json::array();
  for (const MirrorPrimitive& p : st.primitives) {
    json e = primitive_to_json(p);
    e["accepted"] = keep_prims;
    pj.push_back(e);
  }
  refined["primitives"] = pj;
  write_json(fs::path(run_dir) / "primitives_refined.json", refined);
  record_timing(run_dir, "stage2_seconds", wall_seconds(t0));
}

json run_eval(const std::string& run_dir, const std::string& split) {
  auto t0 = std::chrono::steady_clock::now();
  RunLock lock(run_dir);
  RunContext ctx = load_run(run_dir);
  const PipelineConfig& cfg = ctx.cfg;
  std::vector<int> idx = ctx.ds.split_indices(split);
  if (idx.empty())
    throw std::runtime_error("pipeline: no views in split '" + split + "'");

  struct Model {
    std::string name;
    Mlp<float> field;
    std::vector<MirrorPrimitive> prims;
  };
  std::vector<Model> models;
  {
    Checkpoint ck =
        Checkpoint::load((fs::path(run_dir) / "stage1.ckpt").string());
    require_hash("stage1.ckpt", hash_hex(ck.config_hash), cfg.hash());
    Model m{"stage1", Mlp<float>(mlp_config(cfg)), {}};
    ck.to_field(m.field);
    models.push_back(std::move(m));
  }
  if (fs::exists(fs::path(run_dir) / "stage2.ckpt")) {
    Checkpoint ck =
        Checkpoint::load((fs::path(run_dir) / "stage2.ckpt").string());
    require_hash("stage2.ckpt", hash_hex(ck.config_hash), cfg.hash());
    Model m{"stage2", Mlp<float>(mlp_config(cfg)),
            load_primitives(fs::path(run_dir) / "primitives_refined.json",
                            cfg.hash(), /*accepted_only=*/true)};
    ck.to_field(m.field);
    models.push_back(std::move(m));
  }

  RenderConfig rc = render_config(cfg);
  ReflectConfig fc;
  fc.bounce_limit = cfg.bounce_limit;

  std::ofstream csv(fs::path(run_dir) / ("eval_" + split + ".csv"));
  csv << "model,view,psnr,ssim,psnr_mirror,mirror_pixels\n";
  char row[256];

  json summary;
  summary["config_hash"] = hash_hex(cfg.hash());
  summary["split"] = split;
  std::vector<std::vector<ImageBuffer>> renders(models.size());
  for (size_t mi = 0; mi < models.size(); ++mi) {
    const Model& model = models[mi];
    double psnr_acc = 0.0, ssim_acc = 0.0, mirror_acc = 0.0;
    int mirror_views = 0;
    for (int i : idx) {
      const Frame& frame = ctx.ds.frames[i];
      ImageBuffer rendered =
          render_view_blend(model.field, rc, fc, model.prims, frame.camera);
      ImageBuffer gt = ctx.ds.load_image(frame);
      double p = psnr(rendered, gt);
      double s = mean_ssim(rendered, gt);
      double pm = 99.0;
      int mirror_pixels = 0;
      if (!frame.mask.empty()) {
        ImageBuffer mask = ctx.ds.load_mask(frame);
        for (double v : mask.data) mirror_pixels += v > 0.5 ? 1 : 0;
        if (mirror_pixels > 0) {
          pm = psnr_masked(rendered, gt, mask);
          mirror_acc += pm;
          ++mirror_views;
        }
      }
      std::snprintf(row, sizeof(row), "%s,%s,%.6f,%.6f,%.6f,%d\n",
                    model.name.c_str(), view_stem(frame).c_str(), p, s, pm,
                    mirror_pixels);
      csv << row;
      psnr_acc += p;
      ssim_acc += s;
      renders[mi].push_back(std::move(rendered));
    }
    json mj;
    mj["psnr_mean"] = psnr_acc / double(idx.size());
    mj["ssim_mean"] = ssim_acc / double(idx.size());
    if (mirror_views > 0) {
      mj["psnr_mirror_mean"] = mirror_acc / double(mirror_views);
      mj["mirror_views"] = mirror_views;
    }
    summary[model.name] = mj;
  }
  csv.close();

  // side-by-side panels: ground truth followed by each model
  fs::path panel_dir = fs::path(run_dir) / "eval_panels";
  fs::create_directories(panel_dir);
  for (size_t vi = 0; vi < idx.size(); ++vi) {
    const Frame& frame = ctx.ds.frames[idx[vi]];
    ImageBuffer gt = ctx.ds.load_image(frame);
    int w = gt.width, h = gt.height;
    ImageBuffer panel(w * int(models.size() + 1), h, 3);
    auto blit = [&](const ImageBuffer& img, int x0) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c)
            panel.at(x0 + x, y, c) = img.at(x, y, img.channels == 3 ? c : 0);
    };
    blit(gt, 0);
    for (size_t mi = 0; mi < models.size(); ++mi)
      blit(renders[mi][vi], int(mi + 1) * w);
    write_png8((panel_dir / (split + "_" + view_stem(frame) + ".png")).string(),
               panel);
  }

  write_json(fs::path(run_dir) / ("eval_" + split + ".json"), summary);
  record_timing(run_dir, "eval_" + split + "_seconds", wall_seconds(t0));
  return summary;
}

void run_render(const std::string& run_dir, int camera_index,
                const std::string& out_png) {
  RunContext ctx = load_run(run_dir);
  const PipelineConfig& cfg = ctx.cfg;
  if (camera_index < 0 || camera_index >= int(ctx.ds.frames.size()))
    throw std::runtime_error("pipeline: camera index out of range");
  const Frame& frame = ctx.ds.frames[camera_index];

  bool refined = fs::exists(fs::path(run_dir) / "stage2.ckpt");
  Checkpoint ck = Checkpoint::load(
      (fs::path(run_dir) / (refined ? "stage2.ckpt" : "stage1.ckpt")).string());
  require_hash(refined ? "stage2.ckpt" : "stage1.ckpt",
               hash_hex(ck.config_hash), cfg.hash());
  Mlp<float> field(mlp_config(cfg));
  ck.to_field(field);
  std::vector<MirrorPrimitive> prims;
  if (refined)
    prims = load_primitives(fs::path(run_dir) / "primitives_refined.json",
                            cfg.hash(), /*accepted_only=*/true);

  RenderConfig rc = render_config(cfg);
  ReflectConfig fc;
  fc.bounce_limit = cfg.bounce_limit;
  ImageBuffer img = render_view_blend(field, rc, fc, prims, frame.camera);
  write_png8(out_png, img);
}

}  // namespace nerfmd
