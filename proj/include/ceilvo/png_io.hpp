#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "ceilvo/common.hpp"
#include "ceilvo/image.hpp"

namespace ceilvo {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

/// Writes an 8-bit grayscale PNG; intensities are clamped to [0, 255] and
/// rounded half away from zero. Deterministic for identical pixel content.
inline void write_gray_png(const std::filesystem::path& path, const Image& image) {
  detail::FileHandle file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw DataError("cannot open PNG for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialization failed");
  }
  std::vector<png_byte> row(image.width());
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng write error: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width(), image.height(), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const double v = std::clamp(static_cast<double>(image.at(x, y)), 0.0, 255.0);
      row[x] = static_cast<png_byte>(std::lround(v));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads an 8-bit grayscale PNG into float intensities [0, 255]. Color or
/// 16-bit inputs are reduced to 8-bit grayscale.
inline Image read_gray_png(const std::filesystem::path& path) {
  detail::FileHandle file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw DataError("cannot open PNG: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialization failed");
  }
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng read error (not a valid PNG?): " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_strip_alpha(png);
  const png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_COLOR)
    png_set_rgb_to_gray(png, PNG_ERROR_ACTION_NONE, -1.0, -1.0);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * h);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = buffer.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(x, y) = static_cast<float>(buffer[y * stride + x]);
  return out;
}

/// Reads a P2/P5 PGM and scales values by maxval into [0, 1] (the vignette
/// file convention).
inline Image read_pgm_normalized(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open PGM: " + path.string());

  const auto next_token = [&in, &path]() -> std::string {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw DataError("truncated PGM header: " + path.string());
  };

  const std::string magic = next_token();
  if (magic != "P2" && magic != "P5") throw DataError("not a PGM file: " + path.string());
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw DataError("invalid PGM header: " + path.string());

  Image out(w, h);
  if (magic == "P2") {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(x, y) = static_cast<float>(std::stod(next_token()) / maxval);
  } else {
    in.get();  // single whitespace after maxval
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw DataError("truncated PGM payload: " + path.string());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const size_t i = (static_cast<size_t>(y) * w + x) * bytes;
        const unsigned v = bytes == 1 ? buf[i] : (static_cast<unsigned>(buf[i]) << 8) | buf[i + 1];
        out.at(x, y) = static_cast<float>(static_cast<double>(v) / maxval);
      }
    }
  }
  return out;
}

}  // namespace ceilvo
