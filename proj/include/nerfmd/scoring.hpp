#pragma once

#include <utility>
#include <vector>

#include "nerfmd/geometry.hpp"

namespace nerfmd {

struct SsimWindow {
  int radius = 5;        // 11x11 window
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;  // for unit dynamic range
  double c2 = 0.03 * 0.03;
};

struct ScoreMaps {
  ImageBuffer ssim;            // [-1, 1]
  ImageBuffer depth;
  ImageBuffer depth_variance;  // >= 0
  ImageBuffer score;           // [0, 1]
};

// Rec. 709 luminance of an rgb buffer (1-channel inputs pass through).
ImageBuffer luminance(const ImageBuffer& img);

// Per-pixel SSIM between two images of equal size, computed on luminance
// with a Gaussian-weighted window and reflected border padding.
ImageBuffer ssim_map(const ImageBuffer& rendered, const ImageBuffer& target,
                     const SsimWindow& window = {});

// s = (1 - SSIM)/2 * exp(-c * V)
ImageBuffer score_map(const ImageBuffer& ssim, const ImageBuffer& variance,
                      double c);

// Pixels with score strictly above S.
std::vector<std::pair<int, int>> threshold_scores(const ImageBuffer& score,
                                                  double S);

}  // namespace nerfmd
