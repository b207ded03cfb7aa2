#include "nerfmd/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nerfmd {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

ConfigMap ConfigMap::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str());
}

ConfigMap ConfigMap::parse_string(const std::string& text) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config: bad section header at line " +
                                 std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected key = value at line " +
                               std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    if (key.empty())
      throw std::runtime_error("config: empty key at line " +
                               std::to_string(lineno));
    std::string full = section.empty() ? key : section + "." + key;
    if (map.values_.count(full))
      throw std::runtime_error("config: duplicate key " + full);
    map.values_[full] = value;
  }
  return map;
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  size_t pos = 0;
  double v = std::stod(it->second, &pos);
  if (pos != it->second.size())
    throw std::runtime_error("config: bad number for " + key);
  return v;
}

int ConfigMap::get_int(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  size_t pos = 0;
  int v = std::stoi(it->second, &pos);
  if (pos != it->second.size())
    throw std::runtime_error("config: bad integer for " + key);
  return v;
}

uint64_t ConfigMap::get_u64(const std::string& key, uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  size_t pos = 0;
  unsigned long long v = std::stoull(it->second, &pos);
  if (pos != it->second.size())
    throw std::runtime_error("config: bad integer for " + key);
  return uint64_t(v);
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw std::runtime_error("config: bad boolean for " + key);
}

std::string ConfigMap::get_string(const std::string& key,
                                  const std::string& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  return it->second;
}

void ConfigMap::reject_unknown() const {
  std::string unknown;
  for (const auto& [k, v] : values_)
    if (!used_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  if (!unknown.empty())
    throw std::runtime_error("config: unknown keys: " + unknown);
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  return from_map(ConfigMap::parse_file(path));
}

PipelineConfig PipelineConfig::from_map(const ConfigMap& m) {
  PipelineConfig c;
  c.scene_width = m.get_int("scene.width", c.scene_width);
  c.scene_height = m.get_int("scene.height", c.scene_height);
  c.scene_train_views = m.get_int("scene.train_views", c.scene_train_views);
  c.scene_test_views = m.get_int("scene.test_views", c.scene_test_views);
  c.scene_mirrors = m.get_int("scene.mirrors", c.scene_mirrors);
  c.scene_focal = m.get_double("scene.focal", c.scene_focal);
  c.scene_bounce_limit = m.get_int("scene.bounce_limit", c.scene_bounce_limit);
  c.scene_room_half = m.get_double("scene.room_half", c.scene_room_half);
  c.scene_mirror_hu = m.get_double("scene.mirror_hu", c.scene_mirror_hu);
  c.scene_mirror_hv = m.get_double("scene.mirror_hv", c.scene_mirror_hv);

  c.field_pos_levels = m.get_int("field.pos_levels", c.field_pos_levels);
  c.field_dir_levels = m.get_int("field.dir_levels", c.field_dir_levels);
  c.field_hidden = m.get_int("field.hidden", c.field_hidden);
  c.field_depth = m.get_int("field.depth", c.field_depth);
  c.field_color_hidden = m.get_int("field.color_hidden", c.field_color_hidden);

  c.stage1_iterations = m.get_int("stage1.iterations", c.stage1_iterations);
  c.stage1_batch_rays = m.get_int("stage1.batch_rays", c.stage1_batch_rays);
  c.stage1_lr_init = m.get_double("stage1.lr_init", c.stage1_lr_init);
  c.stage1_lr_final = m.get_double("stage1.lr_final", c.stage1_lr_final);
  c.lambda_depth = m.get_double("stage1.lambda_depth", c.lambda_depth);
  c.lambda_var = m.get_double("stage1.lambda_var", c.lambda_var);
  c.lambda_gt = m.get_double("stage1.lambda_gt", c.lambda_gt);
  c.n_coarse = m.get_int("stage1.n_coarse", c.n_coarse);
  c.n_fine = m.get_int("stage1.n_fine", c.n_fine);
  c.near = m.get_double("stage1.near", c.near);
  c.far = m.get_double("stage1.far", c.far);
  c.stage1_seed = m.get_u64("stage1.seed", c.stage1_seed);

  c.score_c = m.get_double("score.c", c.score_c);
  c.score_threshold = m.get_double("score.threshold", c.score_threshold);

  c.detect_k = m.get_int("detect.k", c.detect_k);
  c.ransac_iters = m.get_int("detect.ransac_iters", c.ransac_iters);
  c.tau_frac = m.get_double("detect.tau_frac", c.tau_frac);
  c.min_inlier_ratio = m.get_double("detect.min_inlier_ratio", c.min_inlier_ratio);
  c.min_normal_similarity =
      m.get_double("detect.min_normal_similarity", c.min_normal_similarity);
  c.bitmap_cell_frac = m.get_double("detect.bitmap_cell_frac", c.bitmap_cell_frac);
  c.bitmap_rho = m.get_double("detect.bitmap_rho", c.bitmap_rho);
  c.normal_radius_frac =
      m.get_double("detect.normal_radius_frac", c.normal_radius_frac);
  c.normal_knn = m.get_int("detect.knn", c.normal_knn);
  c.max_candidates = m.get_int("detect.max_candidates", c.max_candidates);
  c.detect_seed = m.get_u64("detect.seed", c.detect_seed);

  c.stage2_iterations = m.get_int("stage2.iterations", c.stage2_iterations);
  c.stage2_batch_rays = m.get_int("stage2.batch_rays", c.stage2_batch_rays);
  c.stage2_lr_init = m.get_double("stage2.lr_init", c.stage2_lr_init);
  c.stage2_lr_final = m.get_double("stage2.lr_final", c.stage2_lr_final);
  c.prim_lr_scale = m.get_double("stage2.prim_lr_scale", c.prim_lr_scale);
  c.tau_init = m.get_int("stage2.tau_init", c.tau_init);
  c.tau_inc = m.get_int("stage2.tau_inc", c.tau_inc);
  c.tau_std = m.get_int("stage2.tau_std", c.tau_std);
  c.bounce_limit = m.get_int("stage2.bounce_limit", c.bounce_limit);
  c.stage2_seed = m.get_u64("stage2.seed", c.stage2_seed);

  m.reject_unknown();

  if (c.scene_width <= 0 || c.scene_height <= 0 || c.scene_train_views <= 0 ||
      c.scene_test_views < 0)
    throw std::runtime_error("config: bad scene dimensions");
  if (c.scene_mirrors < 0 || c.scene_mirrors > 2)
    throw std::runtime_error("config: scene.mirrors must be 0, 1 or 2");
  if (!(c.near > 0.0 && c.near < c.far))
    throw std::runtime_error("config: need 0 < near < far");
  if (c.stage1_iterations <= 0 || c.stage2_iterations < 0)
    throw std::runtime_error("config: bad iteration counts");
  if (!(0 < c.tau_init && c.tau_init <= c.tau_inc && c.tau_inc < c.tau_std))
    throw std::runtime_error("config: bad p-norm schedule");
  return c;
}

double PipelineConfig::scene_diameter() const {
  return 2.0 * scene_room_half * std::sqrt(3.0);
}

double PipelineConfig::effective_score_c() const {
  if (score_c >= 0.0) return score_c;
  double d = scene_diameter();
  return 10.0 / (d * d);
}

std::string PipelineConfig::canonical() const {
  std::ostringstream s;
  s.precision(17);
  auto put = [&](const std::string& k, auto v) { s << k << "=" << v << "\n"; };
  put("scene.width", scene_width);
  put("scene.height", scene_height);
  put("scene.train_views", scene_train_views);
  put("scene.test_views", scene_test_views);
  put("scene.mirrors", scene_mirrors);
  put("scene.focal", scene_focal);
  put("scene.bounce_limit", scene_bounce_limit);
  put("scene.room_half", scene_room_half);
  put("scene.mirror_hu", scene_mirror_hu);
  put("scene.mirror_hv", scene_mirror_hv);
  put("field.pos_levels", field_pos_levels);
  put("field.dir_levels", field_dir_levels);
  put("field.hidden", field_hidden);
  put("field.depth", field_depth);
  put("field.color_hidden", field_color_hidden);
  put("stage1.iterations", stage1_iterations);
  put("stage1.batch_rays", stage1_batch_rays);
  put("stage1.lr_init", stage1_lr_init);
  put("stage1.lr_final", stage1_lr_final);
  put("stage1.lambda_depth", lambda_depth);
  put("stage1.lambda_var", lambda_var);
  put("stage1.lambda_gt", lambda_gt);
  put("stage1.n_coarse", n_coarse);
  put("stage1.n_fine", n_fine);
  put("stage1.near", near);
  put("stage1.far", far);
  put("stage1.seed", stage1_seed);
  put("score.c", score_c);
  put("score.threshold", score_threshold);
  put("detect.k", detect_k);
  put("detect.ransac_iters", ransac_iters);
  put("detect.tau_frac", tau_frac);
  put("detect.min_inlier_ratio", min_inlier_ratio);
  put("detect.min_normal_similarity", min_normal_similarity);
  put("detect.bitmap_cell_frac", bitmap_cell_frac);
  put("detect.bitmap_rho", bitmap_rho);
  put("detect.normal_radius_frac", normal_radius_frac);
  put("detect.knn", normal_knn);
  put("detect.max_candidates", max_candidates);
  put("detect.seed", detect_seed);
  put("stage2.iterations", stage2_iterations);
  put("stage2.batch_rays", stage2_batch_rays);
  put("stage2.lr_init", stage2_lr_init);
  put("stage2.lr_final", stage2_lr_final);
  put("stage2.prim_lr_scale", prim_lr_scale);
  put("stage2.tau_init", tau_init);
  put("stage2.tau_inc", tau_inc);
  put("stage2.tau_std", tau_std);
  put("stage2.bounce_limit", bounce_limit);
  put("stage2.seed", stage2_seed);
  return s.str();
}

uint64_t PipelineConfig::hash() const {
  std::string text = canonical();
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace nerfmd
