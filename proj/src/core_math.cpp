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

#include "warpseg/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace warpseg {

namespace {

constexpr std::size_t kPairwiseThreshold = std::size_t{1} << 16;
constexpr std::size_t kPairwiseBlock = 128;

float pairwise_sum(const float* p, std::size_t n) {
  if (n <= kPairwiseBlock) {
    float s = 0.0f;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(p, half) + pairwise_sum(p + half, n - half);
}

void require_same_length(std::span<const float> a, std::span<const float> b, const char* what) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
}

}  // namespace

Grid2D::Grid2D(std::size_t height, std::size_t width, float fill)
    : height_(height), width_(width), values_(height * width, fill) {}

Grid2D::Grid2D(std::size_t height, std::size_t width, std::vector<float> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (values_.size() != height_ * width_) throw std::invalid_argument("Grid2D: value count does not match shape");
}

float accumulate(std::span<const float> values) {
  if (values.size() > kPairwiseThreshold) return pairwise_sum(values.data(), values.size());
  float s = 0.0f;
  for (float v : values) s += v;
  return s;
}

float dot(std::span<const float> a, std::span<const float> b) {
  require_same_length(a, b, "dot");
  float s = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

float l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

float cosine_similarity(std::span<const float> a, std::span<const float> b) {
  require_same_length(a, b, "cosine_similarity");
  const float na = l2_norm(a);
  const float nb = l2_norm(b);
  if (!(na > 0.0f) || !(nb > 0.0f)) throw DegenerateVectorError("degenerate vector: zero norm in cosine similarity");
  const float c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0f, 1.0f);
}

void accumulate_cosine_grad_b(std::span<const float> a, std::span<const float> b, float scale,
                              std::span<float> grad_b) {
  require_same_length(a, b, "cosine gradient");
  require_same_length(b, grad_b, "cosine gradient");
  const float na = l2_norm(a);
  const float nb = l2_norm(b);
  if (!(na > 0.0f) || !(nb > 0.0f)) throw DegenerateVectorError("degenerate vector: zero norm in cosine gradient");
  // d/db [a.b / (|a||b|)] = a / (|a||b|) - cos * b / |b|^2
  const float inv = 1.0f / (na * nb);
  const float c = dot(a, b) * inv;
  const float k = c / (nb * nb);
  for (std::size_t i = 0; i < b.size(); ++i) grad_b[i] += scale * (a[i] * inv - k * b[i]);
}

void softmax_inplace(std::span<float> values) {
  if (values.empty()) return;
  const float m = *std::max_element(values.begin(), values.end());
  for (float& v : values) v = std::exp(v - m);
  const float total = accumulate(values);
  for (float& v : values) v /= total;
}

float log_sum_exp(std::span<const float> values) {
  if (values.empty()) return -std::numeric_limits<float>::infinity();
  const float m = *std::max_element(values.begin(), values.end());
  std::vector<float> e(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) e[i] = std::exp(values[i] - m);
  return m + std::log(accumulate(e));
}

Grid2D spatial_softmax(const Grid2D& grid) {
  Grid2D out = grid;
  softmax_inplace(out.values());
  return out;
}

Matrix row_softmax(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows; ++r) softmax_inplace(out.row(r));
  return out;
}

Grid2D bilinear_upsample(const Grid2D& grid, std::size_t height, std::size_t width) {
  if (grid.height() == 0 || grid.width() == 0) throw std::invalid_argument("bilinear_upsample: empty grid");
  if (height < grid.height() || width < grid.width()) throw std::invalid_argument("downsampling unsupported");

  struct Tap {
    std::size_t lo, hi;
    float frac;
  };
  auto taps = [](std::size_t src, std::size_t dst) {
    std::vector<Tap> t(dst);
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    const double max_coord = static_cast<double>(src - 1);
    for (std::size_t x = 0; x < dst; ++x) {
      double s = (static_cast<double>(x) + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, max_coord);
      const auto lo = static_cast<std::size_t>(std::floor(s));
      const std::size_t hi = std::min(lo + 1, src - 1);
      t[x] = {lo, hi, static_cast<float>(s - static_cast<double>(lo))};
    }
    return t;
  };
  const auto ty = taps(grid.height(), height);
  const auto tx = taps(grid.width(), width);

  auto lerp = [](float a, float b, float f) {
    const float v = a + f * (b - a);
    return std::clamp(v, std::min(a, b), std::max(a, b));
  };

  Grid2D out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const Tap& vy = ty[y];
    for (std::size_t x = 0; x < width; ++x) {
      const Tap& vx = tx[x];
      const float top = lerp(grid(vy.lo, vx.lo), grid(vy.lo, vx.hi), vx.frac);
      const float bottom = lerp(grid(vy.hi, vx.lo), grid(vy.hi, vx.hi), vx.frac);
      out(y, x) = lerp(top, bottom, vy.frac);
    }
  }
  return out;
}

Grid2D minmax_remap(const Grid2D& grid, float lo, float hi) {
  if (lo > hi) throw std::invalid_argument("minmax_remap: lo > hi");
  Grid2D out = grid;
  if (grid.size() == 0) return out;
  const auto [mn, mx] = std::minmax_element(grid.values().begin(), grid.values().end());
  const double gmin = *mn;
  const double range = static_cast<double>(*mx) - gmin;
  if (range < 1e-12) {
    const float mid = static_cast<float>((static_cast<double>(lo) + static_cast<double>(hi)) / 2.0);
    std::fill(out.values().begin(), out.values().end(), mid);
    return out;
  }
  for (float& v : out.values()) {
    const double t = (static_cast<double>(v) - gmin) / range;
    // Endpoint-exact form: t = 0 gives lo, t = 1 gives hi.
    v = static_cast<float>((1.0 - t) * lo + t * hi);
  }
  return out;
}

std::size_t argmax_with_tiebreak(std::span<const float> scores) {
  if (scores.empty()) throw std::invalid_argument("argmax of empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

}  // namespace warpseg
