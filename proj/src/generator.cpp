#include "nerfmd/generator.hpp"

#include <cmath>
#include <filesystem>
#include <limits>

#include "nerfmd/image_io.hpp"
#include "nerfmd/rng.hpp"

namespace fs = std::filesystem;

namespace nerfmd {

namespace {

// wall order: +x -x +y -y +z -z
struct WallHit {
  int wall = -1;
  double t = 0.0;
  double a = 0.0, b = 0.0;  // in-face coordinates
};

WallHit intersect_walls(const Ray& ray, double h, double min_t) {
  WallHit best;
  best.t = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    double d = ray.direction[axis];
    if (std::abs(d) < 1e-12) continue;
    for (int sign = 0; sign < 2; ++sign) {
      double plane = sign == 0 ? h : -h;
      double t = (plane - ray.origin[axis]) / d;
      if (t <= min_t || t >= best.t) continue;
      Vec3 p = ray.origin + t * ray.direction;
      int a_axis = (axis + 1) % 3, b_axis = (axis + 2) % 3;
      if (std::abs(p[a_axis]) > h + 1e-9 || std::abs(p[b_axis]) > h + 1e-9)
        continue;
      best.wall = axis * 2 + sign;
      best.t = t;
      best.a = p[a_axis];
      best.b = p[b_axis];
    }
  }
  return best;
}

Mat3 look_at_rotation(const Vec3& origin, const Vec3& target) {
  Vec3 fwd = (target - origin).normalized();
  Vec3 right = fwd.cross(Vec3(0, 1, 0));
  if (right.norm() < 1e-9) right = Vec3(1, 0, 0);
  right.normalize();
  Vec3 up = right.cross(fwd);
  Mat3 rot;
  rot.col(0) = right;
  rot.col(1) = up;
  rot.col(2) = -fwd;
  return rot;
}

}  // namespace

Vec3 SceneModel::wall_color(int wall, double a, double b) const {
  // Texture frequency is deliberately modest: the training budget is a few
  // minutes on one core, and the field must be able to reproduce wall detail
  // sharply for the photometric mirror score to separate.
  const double cell = 0.5;
  int checker = (int(std::floor(a / cell)) + int(std::floor(b / cell))) & 1;
  double wave = 0.5 + 0.5 * std::sin(1.7 * a + 1.3 * b + phase[wall]);
  Vec3 c = base_color[wall] * (0.35 + 0.55 * checker) + accent_color[wall] * (0.25 * wave);
  return c.cwiseMin(1.0).cwiseMax(0.0);
}

SceneModel::TraceResult SceneModel::trace(const Ray& start) const {
  TraceResult out;
  Ray ray = start;
  const double eps = 1e-6 * room_half;
  for (int bounce = 0; bounce <= bounce_limit; ++bounce) {
    WallHit wall = intersect_walls(ray, room_half, eps);
    int mirror_id = -1;
    Hit mirror_hit;
    if (bounce < bounce_limit) {
      for (int m = 0; m < int(mirrors.size()); ++m) {
        auto hit = intersect_primitive(ray, mirrors[m], eps);
        if (hit && hit->t < wall.t &&
            (mirror_id < 0 || hit->t < mirror_hit.t)) {
          mirror_id = m;
          mirror_hit = *hit;
        }
      }
    }
    if (bounce == 0)
      out.first_depth = mirror_id >= 0 ? mirror_hit.t : wall.t;
    if (mirror_id >= 0) {
      if (bounce == 0) out.mirror_first = true;
      Ray next;
      next.origin = mirror_hit.point;
      next.direction = reflect_direction(ray.direction, mirror_hit.normal);
      ray = next;
      continue;
    }
    if (wall.wall >= 0) out.color = wall_color(wall.wall, wall.a, wall.b);
    return out;
  }
  return out;  // unreachable: the last lap ignores mirrors
}

SceneModel build_scene(const PipelineConfig& cfg, uint64_t seed) {
  SceneModel scene;
  scene.room_half = cfg.scene_room_half;
  scene.bounce_limit = cfg.scene_bounce_limit;

  Rng rng(Rng::mix(seed, 0x5343454e45ULL));
  for (int w = 0; w < 6; ++w) {
    scene.base_color[w] =
        Vec3(rng.uniform(0.2, 0.85), rng.uniform(0.2, 0.85), rng.uniform(0.2, 0.85));
    scene.accent_color[w] =
        Vec3(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
    scene.phase[w] = rng.uniform(0.0, 6.28318);
  }

  double azimuth = rng.uniform(0.0, 2.0 * M_PI);
  for (int m = 0; m < cfg.scene_mirrors; ++m) {
    double ang = azimuth + m * M_PI + rng.uniform(-0.15, 0.15);
    Vec3 radial(std::cos(ang), 0.0, std::sin(ang));
    MirrorPrimitive prim;
    prim.center = 0.55 * scene.room_half * radial +
                  Vec3(0.0, rng.uniform(-0.05, 0.05), 0.0);
    prim.n = -radial;  // facing the room center
    prim.v = Vec3(0, 1, 0);
    prim.u = prim.v.cross(prim.n).normalized();
    prim.half_extents = Vec2(cfg.scene_mirror_hu, cfg.scene_mirror_hv);
    prim.orthonormalize();
    scene.mirrors.push_back(prim);
  }
  return scene;
}

std::vector<Camera> build_cameras(const PipelineConfig& cfg, uint64_t seed) {
  Rng rng(Rng::mix(seed, 0x43414d53ULL));
  std::vector<Camera> cams;
  int id = 0;
  auto make = [&](double frac, double offset) {
    double ang = 2.0 * M_PI * frac + offset + rng.uniform(-0.05, 0.05);
    // Spread the orbit radii: with all cameras equidistant from the scene
    // center, a fog field at that common distance is depth-consistent across
    // views and training can stall there.
    double radius = cfg.scene_room_half * (0.52 + rng.uniform(0.0, 0.38));
    double y = rng.uniform(-0.3, 0.3) * cfg.scene_room_half;
    Vec3 origin(radius * std::cos(ang), y, radius * std::sin(ang));
    Vec3 target(rng.uniform(-0.22, 0.22), rng.uniform(-0.22, 0.22),
                rng.uniform(-0.22, 0.22));
    Camera cam;
    cam.id = id++;
    cam.width = cfg.scene_width;
    cam.height = cfg.scene_height;
    cam.focal = cfg.scene_focal * cfg.scene_width;
    cam.principal = Vec2(0.5 * cfg.scene_width, 0.5 * cfg.scene_height);
    cam.origin = origin;
    cam.rotation = look_at_rotation(origin, target);
    cam.near_t = cfg.near;
    cam.far_t = cfg.far;
    cam.validate();
    return cam;
  };
  for (int i = 0; i < cfg.scene_train_views; ++i)
    cams.push_back(make(double(i) / cfg.scene_train_views, 0.0));
  for (int i = 0; i < cfg.scene_test_views; ++i)
    cams.push_back(make(double(i) / std::max(cfg.scene_test_views, 1), 0.09));
  return cams;
}

Dataset generate_scene(const PipelineConfig& cfg, uint64_t seed,
                       const std::string& out_dir) {
  SceneModel scene = build_scene(cfg, seed);
  std::vector<Camera> cams = build_cameras(cfg, seed);

  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");
  fs::create_directories(fs::path(out_dir) / "depth");

  Dataset ds;
  ds.root = out_dir;
  ds.width = cfg.scene_width;
  ds.height = cfg.scene_height;
  ds.diameter = cfg.scene_diameter();
  ds.generator_seed = seed;
  ds.gt_primitives = scene.mirrors;

  char name[64];
  for (int i = 0; i < int(cams.size()); ++i) {
    bool is_train = i < cfg.scene_train_views;
    const char* split = is_train ? "train" : "test";
    int local = is_train ? i : i - cfg.scene_train_views;
    std::snprintf(name, sizeof(name), "%s_%03d", split, local);

    ImageBuffer color(cfg.scene_width, cfg.scene_height, 3);
    ImageBuffer mask(cfg.scene_width, cfg.scene_height, 1);
    ImageBuffer depth(cfg.scene_width, cfg.scene_height, 1);
    for (int y = 0; y < cfg.scene_height; ++y)
      for (int x = 0; x < cfg.scene_width; ++x) {
        Ray ray = camera_ray(cams[i], Vec2(x + 0.5, y + 0.5));
        SceneModel::TraceResult res = scene.trace(ray);
        for (int c = 0; c < 3; ++c) color.at(x, y, c) = res.color[c];
        mask.at(x, y) = res.mirror_first ? 1.0 : 0.0;
        depth.at(x, y) = res.first_depth;
      }

    Frame frame;
    frame.camera = cams[i];
    frame.split = split;
    frame.image = std::string("images/") + name + ".png";
    frame.mask = std::string("masks/") + name + ".png";
    frame.depth = std::string("depth/") + name + ".f32";
    write_png8((fs::path(out_dir) / frame.image).string(), color);
    write_png8((fs::path(out_dir) / frame.mask).string(), mask);
    write_raw_f32((fs::path(out_dir) / frame.depth).string(), depth);
    ds.frames.push_back(std::move(frame));
  }
  ds.save_manifest();
  return ds;
}

}  // namespace nerfmd
