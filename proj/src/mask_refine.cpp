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

#include "warpseg/mask_refine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace warpseg {

std::vector<NeighborOffset> neighbor_offsets(std::span<const int> dilations) {
  std::vector<NeighborOffset> out;
  for (int d : dilations) {
    if (d <= 0) throw std::invalid_argument("PAMR dilations must be positive");
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if (dy != 0 || dx != 0) out.push_back({dy * d, dx * d});
  }
  return out;
}

AffinityField compute_affinity(const RgbImage& image, const PamrConfig& config) {
  if (image.height == 0 || image.width == 0) throw std::invalid_argument("compute_affinity: empty image");
  if (image.values.size() != image.height * image.width * 3)
    throw std::invalid_argument("compute_affinity: image buffer does not match its shape");
  if (!(config.kernel_scale > 0.0f)) throw std::invalid_argument("compute_affinity: kernel scale must be positive");

  AffinityField field;
  field.height = image.height;
  field.width = image.width;
  field.offsets = neighbor_offsets(config.dilations);
  const std::size_t k_count = field.offsets.size();
  const auto h = static_cast<long>(image.height);
  const auto w = static_cast<long>(image.width);
  field.weights.assign(image.height * image.width * k_count, 0.0f);
  field.self_weight.assign(image.height * image.width, 0.0f);

  std::vector<float> dist(k_count);
  std::vector<char> inside(k_count);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y * w + x);
      std::size_t n = 0;
      double sum = 0.0;
      for (std::size_t k = 0; k < k_count; ++k) {
        const long qy = y + field.offsets[k].dy, qx = x + field.offsets[k].dx;
        inside[k] = qy >= 0 && qy < h && qx >= 0 && qx < w;
        if (!inside[k]) continue;
        float d = 0.0f;
        for (std::size_t c = 0; c < 3; ++c)
          d += std::fabs(image.values[p * 3 + c] - image.values[static_cast<std::size_t>(qy * w + qx) * 3 + c]);
        dist[k] = d / 3.0f;
        sum += dist[k];
        ++n;
      }
      if (n == 0) {
        field.self_weight[p] = 1.0f;
        continue;
      }
      const double mean = sum / static_cast<double>(n);
      double var = 0.0;
      for (std::size_t k = 0; k < k_count; ++k)
        if (inside[k]) var += (dist[k] - mean) * (dist[k] - mean);
      const double sigma = std::max(std::sqrt(var / static_cast<double>(n)), static_cast<double>(config.sigma_floor));
      const double denom = static_cast<double>(config.kernel_scale) * sigma;

      // Softmax of -d / denom over in-bounds offsets; the smallest distance is the shift.
      double dmin = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < k_count; ++k)
        if (inside[k]) dmin = std::min(dmin, static_cast<double>(dist[k]));
      double z = 0.0;
      float* wp = field.weights.data() + p * k_count;
      for (std::size_t k = 0; k < k_count; ++k) {
        if (!inside[k]) continue;
        const double e = std::exp(-(dist[k] - dmin) / denom);
        wp[k] = static_cast<float>(e);
        z += e;
      }
      for (std::size_t k = 0; k < k_count; ++k) wp[k] = static_cast<float>(wp[k] / z);
    }
  }
  return field;
}

SimilarityVolume refine(const SimilarityVolume& scores, const AffinityField& affinity, std::size_t iterations) {
  if (scores.height != affinity.height || scores.width != affinity.width)
    throw std::invalid_argument("refine: score maps are " + std::to_string(scores.height) + "x" +
                                std::to_string(scores.width) + " but the affinity field is " +
                                std::to_string(affinity.height) + "x" + std::to_string(affinity.width));
  SimilarityVolume current = scores;
  if (iterations == 0) return current;

  const auto h = static_cast<long>(affinity.height);
  const auto w = static_cast<long>(affinity.width);
  const std::size_t k_count = affinity.slots();
  SimilarityVolume next = current;
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t j = 0; j < current.classes; ++j) {
      const auto src = current.plane(j);
      auto dst = next.plane(j);
      for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
          const std::size_t p = static_cast<std::size_t>(y * w + x);
          float acc = affinity.self_weight[p] * src[p];
          float lo = std::numeric_limits<float>::infinity();
          float hi = -lo;
          if (affinity.self_weight[p] > 0.0f) lo = hi = src[p];
          const float* wp = affinity.weights.data() + p * k_count;
          for (std::size_t k = 0; k < k_count; ++k) {
            if (wp[k] == 0.0f) continue;
            const long qy = y + affinity.offsets[k].dy, qx = x + affinity.offsets[k].dx;
            if (qy < 0 || qy >= h || qx < 0 || qx >= w) continue;
            const float v = src[static_cast<std::size_t>(qy * w + qx)];
            acc += wp[k] * v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
          // A convex combination stays inside the hull of its inputs; clamp away rounding.
          dst[p] = std::clamp(acc, lo, hi);
        }
      }
    }
    std::swap(current, next);
  }
  return current;
}

}  // namespace warpseg
