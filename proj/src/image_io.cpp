#include "nerfmd/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <vector>

namespace nerfmd {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint16_t quantize16(double v) {
  v = std::min(std::max(v, 0.0), 1.0);
  return uint16_t(v * 65535.0 + 0.5);
}

uint8_t quantize8(double v) {
  v = std::min(std::max(v, 0.0), 1.0);
  return uint8_t(v * 255.0 + 0.5);
}

void write_png_impl(const std::string& path, const ImageBuffer& img,
                    int bit_depth) {
  if (img.width <= 0 || img.height <= 0)
    throw std::invalid_argument("write_png: empty image");
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_png: need 1 or 3 channels");

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("write_png: init failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png: init failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: encode failure for " + path);
  }
  png_init_io(png, fp.get());
  int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, img.width, img.height, bit_depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  // strip metadata that would break byte-identical reruns
  png_set_compression_level(png, 6);
  png_write_info(png, info);

  const int stride = img.width * img.channels * (bit_depth / 8);
  std::vector<uint8_t> row(stride);
  for (int y = 0; y < img.height; ++y) {
    uint8_t* out = row.data();
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        if (bit_depth == 8) {
          *out++ = quantize8(img.at(x, y, c));
        } else {
          uint16_t q = quantize16(img.at(x, y, c));
          *out++ = uint8_t(q >> 8);  // PNG is big-endian
          *out++ = uint8_t(q & 0xff);
        }
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png8(const std::string& path, const ImageBuffer& img) {
  write_png_impl(path, img, 8);
}

void write_png16(const std::string& path, const ImageBuffer& img) {
  if (img.channels != 1)
    throw std::invalid_argument("write_png16: single channel only");
  write_png_impl(path, img, 16);
}

ImageBuffer read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("read_png: init failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png: init failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: decode failure for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  int color = png_get_color_type(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  bit_depth = png_get_bit_depth(png, info);
  int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: unsupported channel count");
  }

  ImageBuffer img(int(w), int(h), channels);
  std::vector<uint8_t> row(size_t(w) * channels * (bit_depth / 8));
  double scale = bit_depth == 8 ? 1.0 / 255.0 : 1.0 / 65535.0;
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    const uint8_t* in = row.data();
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        if (bit_depth == 8) {
          img.at(int(x), int(y), c) = *in++ * scale;
        } else {
          uint16_t v = uint16_t((in[0] << 8) | in[1]);
          in += 2;
          img.at(int(x), int(y), c) = v * scale;
        }
      }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_raw_f32(const std::string& path, const ImageBuffer& img) {
  if (img.channels != 1)
    throw std::invalid_argument("write_raw_f32: single channel only");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_raw_f32: cannot open " + path);
  for (double v : img.data) {
    float x = float(v);
    f.write(reinterpret_cast<const char*>(&x), sizeof(x));
  }
}

ImageBuffer read_raw_f32(const std::string& path, int width, int height) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_raw_f32: cannot open " + path);
  ImageBuffer img(width, height, 1);
  for (double& v : img.data) {
    float x = 0.0f;
    f.read(reinterpret_cast<char*>(&x), sizeof(x));
    if (!f) throw std::runtime_error("read_raw_f32: truncated file " + path);
    v = double(x);
  }
  return img;
}

}  // namespace nerfmd
