#pragma once

#include <string>
#include <vector>

#include "nerfmd/config.hpp"
#include "nerfmd/dataset.hpp"
#include "nerfmd/geometry.hpp"

namespace nerfmd {

// Analytic scene: a textured box room with 0-2 free-standing, double-sided
// perfect mirror panels. Colors are view independent (pure albedo), so a
// radiance field can represent the direct geometry exactly.
struct SceneModel {
  double room_half = 1.0;
  int bounce_limit = 2;
  std::vector<MirrorPrimitive> mirrors;
  // per-wall texture palette
  std::array<Vec3, 6> base_color;
  std::array<Vec3, 6> accent_color;
  std::array<double, 6> phase;

  struct TraceResult {
    Vec3 color = Vec3::Zero();
    double first_depth = 0.0;  // distance to the first surface (mirror or wall)
    bool mirror_first = false; // primary ray hit a mirror panel
  };

  TraceResult trace(const Ray& ray) const;
  Vec3 wall_color(int wall, double a, double b) const;
};

// Deterministic scene layout for a seed: palette, mirror placement, cameras.
SceneModel build_scene(const PipelineConfig& cfg, uint64_t seed);
std::vector<Camera> build_cameras(const PipelineConfig& cfg, uint64_t seed);

// Renders the dataset (images, GT masks, GT depths, manifest) to out_dir.
Dataset generate_scene(const PipelineConfig& cfg, uint64_t seed,
                       const std::string& out_dir);

}  // namespace nerfmd
