#pragma once

#include <string>

#include "nerfmd/geometry.hpp"

namespace nerfmd {

// 8-bit PNG, grayscale or rgb depending on the buffer's channel count.
// Values are clamped to [0,1].
void write_png8(const std::string& path, const ImageBuffer& img);

// 16-bit grayscale PNG of a single-channel buffer; values clamped to [0,1].
void write_png16(const std::string& path, const ImageBuffer& img);

// Reads an 8- or 16-bit PNG into [0,1] doubles (1 or 3 channels).
ImageBuffer read_png(const std::string& path);

// Raw little-endian float32 dump of a single-channel buffer.
void write_raw_f32(const std::string& path, const ImageBuffer& img);
ImageBuffer read_raw_f32(const std::string& path, int width, int height);

}  // namespace nerfmd
