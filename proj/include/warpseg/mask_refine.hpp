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

// Pixel-adaptive mask refinement: score maps are repeatedly replaced by an
// image-affinity weighted average over a dilated 8-neighbourhood.
//
// For pixel p and in-bounds neighbour q:
//   d(p, q)  = mean over channels |I_p - I_q|
//   sigma_p  = max(std of d(p, .) over in-bounds offsets, sigma_floor)
//   w(p, q)  = exp(-d(p, q) / (kernel_scale * sigma_p)), normalized per pixel.

#include <cstdint>
#include <span>
#include <vector>

#include "warpseg/volume.hpp"

namespace warpseg {

/// H x W x 3 interleaved, values in [0, 1].
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), values(h * w * 3, 0.0f) {}

  float& at(std::size_t r, std::size_t c, std::size_t ch) { return values[(r * width + c) * 3 + ch]; }
  float at(std::size_t r, std::size_t c, std::size_t ch) const { return values[(r * width + c) * 3 + ch]; }
};

struct PamrConfig {
  std::vector<int> dilations{1, 2, 4, 8, 12, 24};
  float sigma_floor = 1e-4f;
  float kernel_scale = 0.1f;
  std::size_t iterations = 10;
};

struct NeighborOffset {
  int dy = 0;
  int dx = 0;
};

/// Per-pixel weights over a fixed offset list plus a self slot. The self slot
/// is 1 only for pixels without any in-bounds neighbour (e.g. a 1x1 image).
struct AffinityField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<NeighborOffset> offsets;
  std::vector<float> weights;      // [pixel][offset]
  std::vector<float> self_weight;  // [pixel]

  std::size_t slots() const { return offsets.size(); }
  float weight(std::size_t pixel, std::size_t k) const { return weights[pixel * offsets.size() + k]; }
};

/// The 8-neighbourhood at every dilation, in a fixed order.
std::vector<NeighborOffset> neighbor_offsets(std::span<const int> dilations);

AffinityField compute_affinity(const RgbImage& image, const PamrConfig& config = {});

SimilarityVolume refine(const SimilarityVolume& scores, const AffinityField& affinity, std::size_t iterations);

}  // namespace warpseg
