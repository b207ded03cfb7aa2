#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "nerfmd/geometry.hpp"

namespace nerfmd {

struct Frame {
  Camera camera;
  std::string split;  // "train" or "test"
  std::string image;  // paths relative to the dataset root
  std::string mask;   // optional
  std::string depth;  // optional
};

struct Dataset {
  std::string root;
  int width = 0;
  int height = 0;
  double diameter = 0.0;
  uint64_t generator_seed = 0;
  std::vector<Frame> frames;
  std::vector<MirrorPrimitive> gt_primitives;

  std::vector<int> split_indices(const std::string& split) const;
  ImageBuffer load_image(const Frame& frame) const;
  ImageBuffer load_mask(const Frame& frame) const;   // throws when absent
  ImageBuffer load_depth(const Frame& frame) const;  // throws when absent

  static Dataset load(const std::string& root);
  void save_manifest() const;
};

nlohmann::json primitive_to_json(const MirrorPrimitive& prim);
MirrorPrimitive primitive_from_json(const nlohmann::json& j);

}  // namespace nerfmd
