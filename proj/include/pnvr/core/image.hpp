#pragma once

#include <pnvr/core/error.hpp>

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

namespace pnvr {

// Interleaved float image, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  float& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
};

inline std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline std::uint16_t to_u16(float v) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
}

// Rounds every value to the nearest 8-bit level, as a PNG round trip would.
inline void quantize_u8(Image& img) {
  for (auto& v : img.data) v = to_u8(v) / 255.0f;
}

namespace detail {

struct PngFile {
  std::FILE* f = nullptr;
  ~PngFile() {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

// Writes 1 or 3 channel images at 8 or 16 bits per sample.
inline void write_png(const std::string& path, const Image& img, int bit_depth = 8) {
  if (img.channels != 1 && img.channels != 3) throw DimensionError("PNG writer supports 1 or 3 channels");
  if (bit_depth != 8 && bit_depth != 16) throw DimensionError("PNG bit depth must be 8 or 16");
  detail::PngFile file;
  file.f = std::fopen(path.c_str(), "wb");
  if (!file.f) throw IoError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed for " + path);
  }
  const int bpp = bit_depth / 8;
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels * bpp;
  std::vector<std::uint8_t> buf(stride * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        const std::size_t o = y * stride + (static_cast<std::size_t>(x) * img.channels + c) * bpp;
        if (bit_depth == 8) {
          buf[o] = to_u8(img.at(x, y, c));
        } else {
          const std::uint16_t v = to_u16(img.at(x, y, c));
          buf[o] = static_cast<std::uint8_t>(v >> 8);  // PNG is big-endian
          buf[o + 1] = static_cast<std::uint8_t>(v & 0xFF);
        }
      }
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buf.data() + y * stride;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG " + path);
  }
  png_init_io(png, file.f);
  png_set_IHDR(png, info, img.width, img.height, bit_depth, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads a PNG as 1 (gray) or 3 (RGB) float channels; alpha is dropped.
inline Image read_png(const std::string& path) {
  detail::PngFile file;
  file.f = std::fopen(path.c_str(), "rb");
  if (!file.f) throw IoError("cannot open " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.f) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw IoError("not a PNG file: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialization failed for " + path);
  }
  // Everything with a destructor lives above setjmp so a libpng longjmp skips nothing.
  Image img;
  std::vector<std::uint8_t> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG " + path);
  }
  png_init_io(png, file.f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buf.resize(stride * img.height);
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buf.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (img.channels != 1 && img.channels != 3) throw IoError("unsupported channel count in " + path);
  img.data.resize(img.pixel_count() * img.channels);
  for (int y = 0; y < img.height; ++y)
    for (std::size_t i = 0; i < static_cast<std::size_t>(img.width) * img.channels; ++i) {
      float v;
      if (out_depth == 16) v = ((buf[y * stride + 2 * i] << 8) | buf[y * stride + 2 * i + 1]) / 65535.0f;
      else v = buf[y * stride + i] / 255.0f;
      img.data[static_cast<std::size_t>(y) * img.width * img.channels + i] = v;
    }
  return img;
}

}  // namespace pnvr
