#include "nerfmd/detect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace nerfmd {

namespace {

double cloud_diameter(const std::vector<Vec3>& pts,
                      const std::vector<int>* subset = nullptr) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  auto take = [&](const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  };
  if (subset) {
    for (int i : *subset) take(pts[i]);
  } else {
    for (const Vec3& p : pts) take(p);
  }
  return (hi - lo).norm();
}

// Plane through centroid with normal = smallest-eigenvector of covariance.
struct PlaneFit {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  bool ok = false;
};

PlaneFit least_squares_plane(const std::vector<Vec3>& pts,
                             const std::vector<int>& idx) {
  PlaneFit fit;
  if (idx.size() < 3) return fit;
  Vec3 centroid = Vec3::Zero();
  for (int i : idx) centroid += pts[i];
  centroid /= double(idx.size());
  Mat3 cov = Mat3::Zero();
  for (int i : idx) {
    Vec3 d = pts[i] - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  fit.point = centroid;
  fit.normal = eig.eigenvectors().col(0).normalized();
  fit.ok = true;
  return fit;
}

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Andrew monotone chain, counterclockwise hull.
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) { return a == b; }),
            pts.end());
  const int n = int(pts.size());
  if (n <= 2) return pts;
  std::vector<Vec2> hull(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    while (k >= 2 && cross2(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (int i = n - 2, lower = k + 1; i >= 0; --i) {
    while (k >= lower && cross2(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace

CandidateCloud build_candidate_cloud(
    const std::vector<std::pair<Camera, ScoreMaps>>& views, double S) {
  CandidateCloud cloud;
  for (const auto& [cam, maps] : views) {
    if (maps.score.width != cam.width || maps.score.height != cam.height)
      throw std::invalid_argument("build_candidate_cloud: map/camera size mismatch");
    for (auto [x, y] : threshold_scores(maps.score, S)) {
      double depth = maps.depth.at(x, y);
      if (!(depth > 0.0)) continue;
      cloud.points.push_back(unproject(cam, Vec2(x + 0.5, y + 0.5), depth));
      cloud.camera_ids.push_back(cam.id);
      cloud.scores.push_back(maps.score.at(x, y));
    }
  }
  cloud.normals.assign(cloud.points.size(), Vec3::UnitZ());
  cloud.normal_valid.assign(cloud.points.size(), 0);
  return cloud;
}

CandidateCloud estimate_normals(CandidateCloud cloud, double radius, int k,
                                const std::vector<Camera>& cameras) {
  if (cloud.empty()) throw std::invalid_argument("estimate_normals: empty cloud");
  if (!(radius > 0.0) || k < 3)
    throw std::invalid_argument("estimate_normals: need radius > 0 and k >= 3");

  std::unordered_map<int, Vec3> cam_origin;
  for (const Camera& c : cameras) cam_origin[c.id] = c.origin;

  const int n = int(cloud.size());
  cloud.normals.assign(n, Vec3::UnitZ());
  cloud.normal_valid.assign(n, 0);
  std::vector<std::pair<double, int>> dist(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      dist[j] = {(cloud.points[j] - cloud.points[i]).norm(), j};
    int kk = std::min(k + 1, n);  // +1: the point itself sorts first
    std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
    // neighborhood = k nearest union radius ball; the tail of the partial
    // sort holds everything outside the k nearest, so scan it for the rest
    std::vector<int> nbrs;
    for (int j = 0; j < kk; ++j)
      if (dist[j].second != i) nbrs.push_back(dist[j].second);
    for (int j = kk; j < n; ++j)
      if (dist[j].first <= radius && dist[j].second != i)
        nbrs.push_back(dist[j].second);
    if (int(nbrs.size()) < 3) continue;

    nbrs.push_back(i);
    PlaneFit fit = least_squares_plane(cloud.points, nbrs);
    if (!fit.ok) continue;
    Vec3 normal = fit.normal;
    auto it = cam_origin.find(cloud.camera_ids[i]);
    if (it != cam_origin.end() &&
        normal.dot(it->second - cloud.points[i]) < 0.0)
      normal = -normal;
    cloud.normals[i] = normal;
    cloud.normal_valid[i] = 1;
  }
  return cloud;
}

std::vector<int> segment_kmeans(const CandidateCloud& cloud, int k,
                                uint64_t seed) {
  const int n = int(cloud.size());
  if (k < 1) throw std::invalid_argument("segment_kmeans: k must be >= 1");
  if (n == 0) return {};
  k = std::min(k, n);

  Rng rng(seed);
  double diameter = cloud_diameter(cloud.points);
  double tol = 1e-6 * std::max(diameter, 1e-12);

  // k-means++ seeding
  std::vector<Vec3> centers;
  centers.push_back(cloud.points[rng.uniform_int(n)]);
  std::vector<double> d2(n);
  while (int(centers.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& c : centers)
        best = std::min(best, (cloud.points[i] - c).squaredNorm());
      d2[i] = best;
      total += best;
    }
    if (!(total > 0.0)) {
      centers.push_back(cloud.points[rng.uniform_int(n)]);
      continue;
    }
    double u = rng.uniform() * total;
    int pick = n - 1;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += d2[i];
      if (u <= acc) {
        pick = i;
        break;
      }
    }
    centers.push_back(cloud.points[pick]);
  }

  std::vector<int> labels(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double d = (cloud.points[i] - centers[c]).squaredNorm();
        if (d < best) {
          best = d;
          labels[i] = c;
        }
      }
    }
    std::vector<Vec3> sums(k, Vec3::Zero());
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      sums[labels[i]] += cloud.points[i];
      ++counts[labels[i]];
    }
    double shift = 0.0;
    for (int c = 0; c < k; ++c) {
      Vec3 next = centers[c];
      if (counts[c] > 0) {
        next = sums[c] / double(counts[c]);
      } else {
        // re-seed an empty cluster at the point farthest from its center
        int far_i = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          double d = (cloud.points[i] - centers[labels[i]]).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        next = cloud.points[far_i];
      }
      shift = std::max(shift, (next - centers[c]).norm());
      centers[c] = next;
    }
    if (shift < tol) break;
  }
  // final assignment against converged centers
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      double d = (cloud.points[i] - centers[c]).squaredNorm();
      if (d < best) {
        best = d;
        labels[i] = c;
      }
    }
  }
  return labels;
}

std::vector<int> density_filter_bitmap(const std::vector<Vec2>& points2d,
                                       double cell, double rho) {
  if (!(cell > 0.0)) throw std::invalid_argument("density_filter_bitmap: cell must be > 0");
  if (points2d.empty()) return {};
  Vec2 lo = points2d[0];
  for (const Vec2& p : points2d) lo = lo.cwiseMin(p);

  auto key = [&](const Vec2& p) {
    long long cx = (long long)std::floor((p.x() - lo.x()) / cell);
    long long cy = (long long)std::floor((p.y() - lo.y()) / cell);
    return (cx << 32) ^ (cy & 0xffffffffLL);
  };
  std::unordered_map<long long, int> counts;
  for (const Vec2& p : points2d) ++counts[key(p)];

  std::vector<int> occupancy;
  occupancy.reserve(counts.size());
  for (const auto& [c, cnt] : counts) occupancy.push_back(cnt);
  std::nth_element(occupancy.begin(), occupancy.begin() + occupancy.size() / 2,
                   occupancy.end());
  double median = double(occupancy[occupancy.size() / 2]);
  double threshold = std::max(1.0, median * rho);

  std::vector<int> kept;
  for (int i = 0; i < int(points2d.size()); ++i)
    if (double(counts[key(points2d[i])]) >= threshold) kept.push_back(i);
  return kept;
}

FitMetrics evaluate_fit(const MirrorPrimitive& primitive,
                        const CandidateCloud& cloud,
                        const std::vector<int>& subset, double tau_d,
                        std::vector<int>* inliers_out) {
  FitMetrics m;
  if (subset.empty()) return m;
  double dist_acc = 0.0, cos_acc = 0.0;
  int inliers = 0;
  for (size_t s = 0; s < subset.size(); ++s) {
    int i = subset[s];
    double d = std::abs((cloud.points[i] - primitive.center).dot(primitive.n));
    if (d <= tau_d) {
      ++inliers;
      dist_acc += d;
      if (i < int(cloud.normals.size()) && cloud.normal_valid[i])
        cos_acc += cloud.normals[i].dot(primitive.n);
      else
        cos_acc += 1.0;  // no estimated normal to compare against
      if (inliers_out) inliers_out->push_back(int(s));
    }
  }
  m.inlier_ratio = double(inliers) / double(subset.size());
  if (inliers > 0) {
    m.mean_distance = dist_acc / inliers;
    m.normal_similarity = cos_acc / inliers;
  }
  return m;
}

Obb2 oriented_bounding_box(const std::vector<Vec2>& points) {
  Obb2 box;
  if (points.empty()) return box;
  std::vector<Vec2> hull = convex_hull(points);
  if (hull.size() == 1) {
    box.center = hull[0];
    return box;
  }
  if (hull.size() == 2) {
    Vec2 d = hull[1] - hull[0];
    box.center = 0.5 * (hull[0] + hull[1]);
    box.axis = d.normalized();
    box.half_extents = Vec2(0.5 * d.norm(), 0.0);
    return box;
  }
  double best_area = std::numeric_limits<double>::infinity();
  for (size_t e = 0; e < hull.size(); ++e) {
    Vec2 dir = (hull[(e + 1) % hull.size()] - hull[e]).normalized();
    Vec2 perp(-dir.y(), dir.x());
    double min_u = std::numeric_limits<double>::infinity(), max_u = -min_u;
    double min_v = min_u, max_v = -min_u;
    for (const Vec2& p : hull) {
      double pu = p.dot(dir), pv = p.dot(perp);
      min_u = std::min(min_u, pu);
      max_u = std::max(max_u, pu);
      min_v = std::min(min_v, pv);
      max_v = std::max(max_v, pv);
    }
    double area = (max_u - min_u) * (max_v - min_v);
    if (area < best_area) {
      best_area = area;
      box.axis = dir;
      box.half_extents = Vec2(0.5 * (max_u - min_u), 0.5 * (max_v - min_v));
      double cu = 0.5 * (min_u + max_u), cv = 0.5 * (min_v + max_v);
      box.center = cu * dir + cv * perp;
    }
  }
  return box;
}

FittedPrimitive fit_primitive_ransac(const CandidateCloud& cloud,
                                     const std::vector<int>& subset,
                                     const DetectConfig& cfg) {
  FittedPrimitive out;
  // fit only over points with a valid estimated normal
  std::vector<int> pts;
  for (int i : subset)
    if (cloud.normal_valid.empty() || cloud.normal_valid[i]) pts.push_back(i);
  if (pts.size() < 3) return out;

  Rng rng(Rng::mix(cfg.seed, 0x52414e53414321ULL));
  const int n = int(pts.size());

  int best_inliers = -1;
  double best_mean = std::numeric_limits<double>::infinity();
  Vec3 best_point = Vec3::Zero(), best_normal = Vec3::UnitZ();
  for (int iter = 0; iter < cfg.ransac_iters; ++iter) {
    int a = rng.uniform_int(n), b = rng.uniform_int(n), c = rng.uniform_int(n);
    if (a == b || a == c || b == c) continue;
    const Vec3& pa = cloud.points[pts[a]];
    Vec3 normal = (cloud.points[pts[b]] - pa).cross(cloud.points[pts[c]] - pa);
    double len = normal.norm();
    if (len < 1e-12) continue;
    normal /= len;
    int inliers = 0;
    double dist_acc = 0.0;
    for (int i : pts) {
      double d = std::abs((cloud.points[i] - pa).dot(normal));
      if (d <= cfg.tau_d) {
        ++inliers;
        dist_acc += d;
      }
    }
    double mean = inliers > 0 ? dist_acc / inliers : 0.0;
    if (inliers > best_inliers ||
        (inliers == best_inliers && mean < best_mean)) {
      best_inliers = inliers;
      best_mean = mean;
      best_point = pa;
      best_normal = normal;
    }
  }
  if (best_inliers < 3) return out;

  std::vector<int> inliers;
  for (int i : pts)
    if (std::abs((cloud.points[i] - best_point).dot(best_normal)) <= cfg.tau_d)
      inliers.push_back(i);

  PlaneFit refit = least_squares_plane(cloud.points, inliers);
  if (!refit.ok) return out;
  Vec3 normal = refit.normal;
  // orient toward the estimated point normals
  double orient = 0.0;
  for (int i : inliers)
    if (cloud.normal_valid.empty() || cloud.normal_valid[i])
      orient += cloud.normals[i].dot(normal);
  if (orient < 0.0) normal = -normal;

  // plane basis for the projection
  Vec3 e1 = normal.unitOrthogonal();
  Vec3 e2 = normal.cross(e1);
  std::vector<Vec2> proj(inliers.size());
  for (size_t s = 0; s < inliers.size(); ++s) {
    Vec3 d = cloud.points[inliers[s]] - refit.point;
    proj[s] = Vec2(d.dot(e1), d.dot(e2));
  }
  Vec2 lo = proj[0], hi = proj[0];
  for (const Vec2& p : proj) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  double extent = std::max((hi - lo).maxCoeff(), 1e-9);
  std::vector<int> kept2d =
      density_filter_bitmap(proj, cfg.bitmap_cell_frac * extent, cfg.bitmap_rho);

  std::vector<Vec2> surviving;
  std::vector<int> surviving_idx;
  for (int s : kept2d) {
    surviving.push_back(proj[s]);
    surviving_idx.push_back(inliers[s]);
  }
  if (surviving.size() < 3) return out;

  Obb2 box = oriented_bounding_box(surviving);

  MirrorPrimitive prim;
  prim.kind = PrimitiveKind::Rect;
  prim.center = refit.point + box.center.x() * e1 + box.center.y() * e2;
  prim.u = box.axis.x() * e1 + box.axis.y() * e2;
  prim.n = normal;
  prim.v = normal.cross(prim.u).normalized();
  prim.half_extents = Vec2(std::max(box.half_extents.x(), 1e-6),
                           std::max(box.half_extents.y(), 1e-6));
  prim.orthonormalize();

  out.primitive = prim;
  out.metrics = evaluate_fit(prim, cloud, pts, cfg.tau_d, &out.inlier_indices);
  out.accepted = out.metrics.inlier_ratio >= cfg.min_inlier_ratio &&
                 out.metrics.mean_distance <= cfg.tau_d &&
                 out.metrics.normal_similarity >= cfg.min_normal_similarity;
  return out;
}

void write_cloud_ply(const std::string& path, const CandidateCloud& cloud) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_cloud_ply: cannot open " + path);
  f << "ply\nformat ascii 1.0\n";
  f << "element vertex " << cloud.size() << "\n";
  f << "property float x\nproperty float y\nproperty float z\n";
  f << "property float nx\nproperty float ny\nproperty float nz\n";
  f << "property float score\nend_header\n";
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const Vec3& nrm = cloud.normals[i];
    f << float(p.x()) << " " << float(p.y()) << " " << float(p.z()) << " "
      << float(nrm.x()) << " " << float(nrm.y()) << " " << float(nrm.z()) << " "
      << float(cloud.scores[i]) << "\n";
  }
}

}  // namespace nerfmd
