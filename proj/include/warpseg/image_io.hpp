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

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "warpseg/mask_refine.hpp"
#include "warpseg/volume.hpp"

namespace warpseg {

/// Single-channel 8-bit label image.
struct IndexImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  bool operator==(const IndexImage&) const = default;
};

/// Reads PNG (any colour type) or JPEG into RGB floats in [0, 1].
RgbImage read_rgb_image(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const RgbImage& image);

/// Reads palette indices or 8-bit grey values verbatim (no palette expansion).
IndexImage read_index_png(const std::filesystem::path& path);
void write_index_png(const std::filesystem::path& path, const IndexImage& image);

IndexImage to_index_image(const SegmentationMask& mask);

using Palette = std::array<std::array<std::uint8_t, 3>, 256>;

/// Fixed-seed 256-entry colour table; entry 0 is black.
const Palette& overlay_palette();

/// Blends palette colours over `image` (alpha 0.5); without an image, the
/// palette colours alone.
RgbImage render_overlay(const IndexImage& labels, const RgbImage* image);

}  // namespace warpseg
