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

#include <cstdint>
#include <span>
#include <vector>

#include "warpseg/core_math.hpp"

namespace warpseg {

/// M class score maps of equal shape, stored [class][row][col].
struct SimilarityVolume {
  std::size_t classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  SimilarityVolume() = default;
  SimilarityVolume(std::size_t m, std::size_t h, std::size_t w, float fill = 0.0f)
      : classes(m), height(h), width(w), values(m * h * w, fill) {}

  std::span<float> plane(std::size_t j) { return {values.data() + j * height * width, height * width}; }
  std::span<const float> plane(std::size_t j) const { return {values.data() + j * height * width, height * width}; }
  float& at(std::size_t j, std::size_t r, std::size_t c) { return values[(j * height + r) * width + c]; }
  float at(std::size_t j, std::size_t r, std::size_t c) const { return values[(j * height + r) * width + c]; }

  Grid2D map(std::size_t j) const;
  void set_map(std::size_t j, const Grid2D& grid);

  bool operator==(const SimilarityVolume&) const = default;
};

struct SegmentationMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> labels;

  bool operator==(const SegmentationMask&) const = default;
};

}  // namespace warpseg
