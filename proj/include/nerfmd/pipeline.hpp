#pragma once

#include <json.hpp>
#include <string>

#include "nerfmd/config.hpp"
#include "nerfmd/dataset.hpp"
#include "nerfmd/geometry.hpp"

namespace nerfmd {

// Exclusive ownership of a run directory via a `.lock` file; throws when the
// lock already exists so concurrent runs cannot corrupt each other.
class RunLock {
 public:
  explicit RunLock(const std::string& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

// Mean-squared-error PSNR in dB over all channels, capped at 99.
double psnr(const ImageBuffer& a, const ImageBuffer& b);
// PSNR restricted to pixels where mask > 0.5. Returns 99 for an empty mask.
double psnr_masked(const ImageBuffer& a, const ImageBuffer& b,
                   const ImageBuffer& mask);
// Mean of the per-pixel SSIM map.
double mean_ssim(const ImageBuffer& a, const ImageBuffer& b);

// Synthesizes a dataset (images, masks, depths, manifest) under out_dir.
void run_generate(const PipelineConfig& cfg, uint64_t seed,
                  const std::string& out_dir);

// Trains the radiance field on the train split, renders per-view color /
// depth / depth-variance / SSIM / score maps and writes a checkpoint.
void run_stage1(const PipelineConfig& cfg, const std::string& data_dir,
                const std::string& run_dir);

// Builds the mirror-candidate point cloud from the stage-1 maps, segments it
// and fits rectangular mirror primitives. Writes primitives.json + cloud.ply.
void run_detect(const std::string& run_dir);

// Joint refinement of field and accepted primitives with explicit reflection
// rendering. Refuses runs whose artifacts carry a different config hash.
void run_stage2(const std::string& run_dir);

// Renders the requested split with the stage-1 field and, when available,
// the refined stage-2 model; writes per-view metrics, a summary JSON and
// side-by-side comparison panels. Returns the summary.
nlohmann::json run_eval(const std::string& run_dir, const std::string& split);

// Renders one dataset view with the best available model to a PNG.
void run_render(const std::string& run_dir, int camera_index,
                const std::string& out_png);

}  // namespace nerfmd
