#include "nerfmd/scoring.hpp"

#include <cmath>
#include <stdexcept>

namespace nerfmd {

namespace {

// Reflect an out-of-range index back into [0, n): (dcba | abcd | dcba)
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

std::vector<double> gaussian_kernel(int radius, double sigma) {
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable Gaussian blur of a single-channel buffer with reflected padding.
ImageBuffer blur(const ImageBuffer& img, const std::vector<double>& kernel) {
  const int r = int(kernel.size()) / 2;
  ImageBuffer tmp(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        acc += kernel[i + r] * img.at(reflect_index(x + i, img.width), y);
      tmp.at(x, y) = acc;
    }
  ImageBuffer out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        acc += kernel[i + r] * tmp.at(x, reflect_index(y + i, img.height));
      out.at(x, y) = acc;
    }
  return out;
}

}  // namespace

ImageBuffer luminance(const ImageBuffer& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3)
    throw std::invalid_argument("luminance: expected 1 or 3 channels");
  ImageBuffer out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(x, y) = 0.2126 * img.at(x, y, 0) + 0.7152 * img.at(x, y, 1) +
                     0.0722 * img.at(x, y, 2);
  return out;
}

ImageBuffer ssim_map(const ImageBuffer& rendered, const ImageBuffer& target,
                     const SsimWindow& window) {
  if (!rendered.same_shape(target))
    throw std::invalid_argument("ssim_map: dimension mismatch");
  ImageBuffer a = luminance(rendered);
  ImageBuffer b = luminance(target);

  auto kernel = gaussian_kernel(window.radius, window.sigma);
  ImageBuffer mu_a = blur(a, kernel);
  ImageBuffer mu_b = blur(b, kernel);

  ImageBuffer aa(a.width, a.height, 1), bb(a.width, a.height, 1),
      ab(a.width, a.height, 1);
  for (size_t i = 0; i < a.data.size(); ++i) {
    aa.data[i] = a.data[i] * a.data[i];
    bb.data[i] = b.data[i] * b.data[i];
    ab.data[i] = a.data[i] * b.data[i];
  }
  ImageBuffer m_aa = blur(aa, kernel);
  ImageBuffer m_bb = blur(bb, kernel);
  ImageBuffer m_ab = blur(ab, kernel);

  ImageBuffer out(a.width, a.height, 1);
  for (size_t i = 0; i < a.data.size(); ++i) {
    double ma = mu_a.data[i], mb = mu_b.data[i];
    double var_a = m_aa.data[i] - ma * ma;
    double var_b = m_bb.data[i] - mb * mb;
    double cov = m_ab.data[i] - ma * mb;
    out.data[i] = (2.0 * ma * mb + window.c1) * (2.0 * cov + window.c2) /
                  ((ma * ma + mb * mb + window.c1) * (var_a + var_b + window.c2));
  }
  return out;
}

ImageBuffer score_map(const ImageBuffer& ssim, const ImageBuffer& variance,
                      double c) {
  if (!ssim.same_shape(variance))
    throw std::invalid_argument("score_map: dimension mismatch");
  if (c < 0.0) throw std::invalid_argument("score_map: c must be >= 0");
  ImageBuffer out(ssim.width, ssim.height, 1);
  for (size_t i = 0; i < ssim.data.size(); ++i)
    out.data[i] =
        0.5 * (1.0 - ssim.data[i]) * std::exp(-c * variance.data[i]);
  return out;
}

std::vector<std::pair<int, int>> threshold_scores(const ImageBuffer& score,
                                                  double S) {
  if (S < 0.0 || S > 1.0)
    throw std::invalid_argument("threshold_scores: S must be in [0,1]");
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < score.height; ++y)
    for (int x = 0; x < score.width; ++x)
      if (score.at(x, y) > S) out.emplace_back(x, y);
  return out;
}

}  // namespace nerfmd
