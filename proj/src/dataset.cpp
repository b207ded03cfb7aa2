#include "nerfmd/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "nerfmd/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nerfmd {

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j) {
  return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

json transform_to_json(const Camera& cam) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r)
    rows.push_back(json::array({cam.rotation(r, 0), cam.rotation(r, 1),
                                cam.rotation(r, 2), cam.origin[r]}));
  rows.push_back(json::array({0.0, 0.0, 0.0, 1.0}));
  return rows;
}

void transform_from_json(const json& j, Camera& cam) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) cam.rotation(r, c) = j.at(r).at(c).get<double>();
    cam.origin[r] = j.at(r).at(3).get<double>();
  }
}

}  // namespace

json primitive_to_json(const MirrorPrimitive& prim) {
  json j;
  j["kind"] = prim.kind == PrimitiveKind::Rect ? "rect" : "cylinder";
  j["center"] = vec3_to_json(prim.center);
  j["u"] = vec3_to_json(prim.u);
  j["v"] = vec3_to_json(prim.v);
  j["n"] = vec3_to_json(prim.n);
  j["half_extents"] = json::array({prim.half_extents.x(), prim.half_extents.y()});
  j["active"] = prim.active;
  j["single_sided"] = prim.single_sided;
  return j;
}

MirrorPrimitive primitive_from_json(const json& j) {
  MirrorPrimitive prim;
  prim.kind = j.at("kind").get<std::string>() == "cylinder"
                  ? PrimitiveKind::Cylinder
                  : PrimitiveKind::Rect;
  prim.center = vec3_from_json(j.at("center"));
  prim.u = vec3_from_json(j.at("u"));
  prim.v = vec3_from_json(j.at("v"));
  prim.n = vec3_from_json(j.at("n"));
  prim.half_extents =
      Vec2(j.at("half_extents").at(0).get<double>(),
           j.at("half_extents").at(1).get<double>());
  prim.active = j.value("active", true);
  prim.single_sided = j.value("single_sided", false);
  return prim;
}

std::vector<int> Dataset::split_indices(const std::string& split) const {
  std::vector<int> idx;
  for (int i = 0; i < int(frames.size()); ++i)
    if (frames[i].split == split) idx.push_back(i);
  return idx;
}

ImageBuffer Dataset::load_image(const Frame& frame) const {
  return read_png((fs::path(root) / frame.image).string());
}

ImageBuffer Dataset::load_mask(const Frame& frame) const {
  if (frame.mask.empty())
    throw std::runtime_error("dataset: frame has no mask: " + frame.image);
  return read_png((fs::path(root) / frame.mask).string());
}

ImageBuffer Dataset::load_depth(const Frame& frame) const {
  if (frame.depth.empty())
    throw std::runtime_error("dataset: frame has no depth: " + frame.image);
  return read_raw_f32((fs::path(root) / frame.depth).string(),
                      frame.camera.width, frame.camera.height);
}

Dataset Dataset::load(const std::string& root) {
  std::ifstream f(fs::path(root) / "scene.json");
  if (!f) throw std::runtime_error("dataset: missing scene.json in " + root);
  json j = json::parse(f);

  Dataset ds;
  ds.root = root;
  ds.width = j.at("width").get<int>();
  ds.height = j.at("height").get<int>();
  ds.diameter = j.at("diameter").get<double>();
  ds.generator_seed = j.value("seed", uint64_t(0));
  for (const json& p : j.value("mirrors", json::array()))
    ds.gt_primitives.push_back(primitive_from_json(p));

  for (const json& fj : j.at("frames")) {
    Frame frame;
    frame.split = fj.at("split").get<std::string>();
    frame.image = fj.at("image").get<std::string>();
    frame.mask = fj.value("mask", "");
    frame.depth = fj.value("depth", "");
    Camera& cam = frame.camera;
    cam.id = fj.at("camera_id").get<int>();
    cam.width = ds.width;
    cam.height = ds.height;
    cam.focal = fj.at("focal").get<double>();
    cam.principal = Vec2(fj.at("principal").at(0).get<double>(),
                         fj.at("principal").at(1).get<double>());
    transform_from_json(fj.at("transform"), cam);
    cam.validate();
    ds.frames.push_back(std::move(frame));
  }
  return ds;
}

void Dataset::save_manifest() const {
  json j;
  j["width"] = width;
  j["height"] = height;
  j["diameter"] = diameter;
  j["seed"] = generator_seed;
  json mirrors = json::array();
  for (const MirrorPrimitive& p : gt_primitives)
    mirrors.push_back(primitive_to_json(p));
  j["mirrors"] = mirrors;
  json fr = json::array();
  for (const Frame& frame : frames) {
    json fj;
    fj["split"] = frame.split;
    fj["image"] = frame.image;
    if (!frame.mask.empty()) fj["mask"] = frame.mask;
    if (!frame.depth.empty()) fj["depth"] = frame.depth;
    fj["camera_id"] = frame.camera.id;
    fj["focal"] = frame.camera.focal;
    fj["principal"] =
        json::array({frame.camera.principal.x(), frame.camera.principal.y()});
    fj["transform"] = transform_to_json(frame.camera);
    fr.push_back(fj);
  }
  j["frames"] = fr;

  std::ofstream f(fs::path(root) / "scene.json");
  if (!f) throw std::runtime_error("dataset: cannot write scene.json");
  f << j.dump(2) << "\n";
}

}  // namespace nerfmd
