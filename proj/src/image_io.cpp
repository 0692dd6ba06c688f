// Copyright 2026 The warpseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "warpseg/image_io.hpp"

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>

namespace warpseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  return f;
}

bool has_png_signature(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  unsigned char sig[8] = {};
  return std::fread(sig, 1, 8, f.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw std::runtime_error("cannot read PNG '" + path.string() + "': " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  RgbImage out(img.height, img.width);
  for (std::size_t i = 0; i < buf.size(); ++i) out.values[i] = static_cast<float>(buf[i]) / 255.0f;
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

RgbImage read_jpeg_rgb(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  // Everything touched after setjmp lives outside this frame or is POD.
  RgbImage* out = new RgbImage();
  std::unique_ptr<RgbImage> guard(out);
  auto row_buffer = std::make_unique<std::vector<JSAMPLE>>();
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw std::runtime_error("cannot decode JPEG '" + path.string() + "'");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  *out = RgbImage(cinfo.output_height, cinfo.output_width);
  auto& row = *row_buffer;
  row.resize(static_cast<std::size_t>(cinfo.output_width) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    const std::size_t y = cinfo.output_scanline;
    JSAMPROW rows[1] = {row.data()};
    jpeg_read_scanlines(&cinfo, rows, 1);
    for (std::size_t i = 0; i < row.size(); ++i) out->values[y * row.size() + i] = static_cast<float>(row[i]) / 255.0f;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return std::move(*out);
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

RgbImage read_rgb_image(const std::filesystem::path& path) {
  if (has_png_signature(path)) return read_png_rgb(path);
  return read_jpeg_rgb(path);
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
  std::vector<std::uint8_t> buf(image.values.size());
  std::transform(image.values.begin(), image.values.end(), buf.begin(), to_byte);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG '" + path.string() + "': " + img.message);
}

IndexImage read_index_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  IndexImage* out = new IndexImage();
  std::unique_ptr<IndexImage> guard(out);
  std::vector<png_bytep>* rows = new std::vector<png_bytep>();
  std::unique_ptr<std::vector<png_bytep>> rows_guard(rows);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("cannot decode index PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("index PNG '" + path.string() + "' must be palette or greyscale");
  }
  if (depth == 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("index PNG '" + path.string() + "' has 16-bit samples");
  }
  if (depth < 8) png_set_packing(png);
  png_read_update_info(png, info);
  out->height = png_get_image_height(png, info);
  out->width = png_get_image_width(png, info);
  out->labels.resize(out->height * out->width);
  rows->resize(out->height);
  for (std::size_t y = 0; y < out->height; ++y) (*rows)[y] = out->labels.data() + y * out->width;
  png_read_image(png, rows->data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return std::move(*out);
}

void write_index_png(const std::filesystem::path& path, const IndexImage& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.labels.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG '" + path.string() + "': " + img.message);
}

IndexImage to_index_image(const SegmentationMask& mask) {
  IndexImage out{mask.height, mask.width, std::vector<std::uint8_t>(mask.labels.size())};
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    const auto v = mask.labels[i];
    if (v < 0 || v > 255) throw std::out_of_range("label " + std::to_string(v) + " does not fit an 8-bit index PNG");
    out.labels[i] = static_cast<std::uint8_t>(v);
  }
  return out;
}

const Palette& overlay_palette() {
  static const Palette palette = [] {
    Palette p{};
    std::mt19937 rng(20240613u);
    for (std::size_t i = 1; i < p.size(); ++i)
      for (auto& c : p[i]) c = static_cast<std::uint8_t>(rng() & 0xFFu);
    return p;
  }();
  return palette;
}

RgbImage render_overlay(const IndexImage& labels, const RgbImage* image) {
  if (image && (image->height != labels.height || image->width != labels.width))
    throw std::invalid_argument("render_overlay: image and label sizes differ");
  const auto& palette = overlay_palette();
  RgbImage out(labels.height, labels.width);
  for (std::size_t p = 0; p < labels.labels.size(); ++p) {
    const auto& color = palette[labels.labels[p]];
    for (std::size_t c = 0; c < 3; ++c) {
      const float paint = static_cast<float>(color[c]) / 255.0f;
      out.values[p * 3 + c] = image ? 0.5f * image->values[p * 3 + c] + 0.5f * paint : paint;
    }
  }
  return out;
}

}  // namespace warpseg
