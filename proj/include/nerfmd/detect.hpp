#pragma once

#include <string>
#include <vector>

#include "nerfmd/geometry.hpp"
#include "nerfmd/rng.hpp"
#include "nerfmd/scoring.hpp"

namespace nerfmd {

struct CandidateCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;      // unit, filled by estimate_normals
  std::vector<int> camera_ids;
  std::vector<double> scores;
  std::vector<char> normal_valid; // false when the neighborhood was degenerate

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct FitMetrics {
  double inlier_ratio = 0.0;
  double mean_distance = 0.0;
  double normal_similarity = 0.0;
};

struct FittedPrimitive {
  MirrorPrimitive primitive;
  FitMetrics metrics;
  std::vector<int> inlier_indices;  // indices into the fitted subset
  bool accepted = false;
};

struct DetectConfig {
  double score_threshold = 0.3;      // S
  double normal_radius = 0.1;
  int normal_knn = 12;
  int kmeans_k = 1;
  int ransac_iters = 1000;
  double tau_d = 0.01;               // inlier distance, scene units
  double min_inlier_ratio = 0.6;
  double min_normal_similarity = 0.8;
  double bitmap_cell_frac = 0.02;    // of the cluster planar extent
  double bitmap_rho = 0.25;
  uint64_t seed = 0;
};

// One 3D point per pixel whose score exceeds S, unprojected with the
// rendered depth map. Scores and source cameras are retained.
CandidateCloud build_candidate_cloud(
    const std::vector<std::pair<Camera, ScoreMaps>>& views, double S);

// PCA normal per point over the union of radius-ball and k-nearest
// neighborhoods, oriented toward the source camera. Points with fewer than 3
// neighbors are flagged invalid.
CandidateCloud estimate_normals(CandidateCloud cloud, double radius, int k,
                                const std::vector<Camera>& cameras);

// Deterministic k-means (k-means++ init, Lloyd) on point positions.
// Returns one label in [0, k) per point; k is reduced if the cloud is small.
std::vector<int> segment_kmeans(const CandidateCloud& cloud, int k,
                                uint64_t seed);

// Keeps the points whose grid cell holds at least max(1, median * rho)
// points; grid pitch is `cell`. Returns indices into points2d.
std::vector<int> density_filter_bitmap(const std::vector<Vec2>& points2d,
                                       double cell, double rho);

// RANSAC plane fit over the given subset of the cloud, followed by a
// least-squares refit, bitmap density filtering of the projected inliers and
// an oriented-bounding-box extraction for the rect extent.
FittedPrimitive fit_primitive_ransac(const CandidateCloud& cloud,
                                     const std::vector<int>& subset,
                                     const DetectConfig& cfg);

// Inlier ratio, mean unbounded-shape distance over inliers and mean normal
// cosine for a primitive against a point/normal subset.
FitMetrics evaluate_fit(const MirrorPrimitive& primitive,
                        const CandidateCloud& cloud,
                        const std::vector<int>& subset, double tau_d,
                        std::vector<int>* inliers_out = nullptr);

// Minimal-area enclosing rectangle of 2D points (hull + rotating calipers).
// Returns center, unit axis of the first extent and the two half extents.
struct Obb2 {
  Vec2 center = Vec2::Zero();
  Vec2 axis = Vec2(1, 0);
  Vec2 half_extents = Vec2::Zero();
};
Obb2 oriented_bounding_box(const std::vector<Vec2>& points);

// ASCII PLY with positions, normals and scores for inspection.
void write_cloud_ply(const std::string& path, const CandidateCloud& cloud);

}  // namespace nerfmd
