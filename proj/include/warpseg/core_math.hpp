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

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace warpseg {

/// Raised when a cosine is requested against a zero-norm vector.
class DegenerateVectorError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Row-major f32 grid in patch (or pixel) units.
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(std::size_t height, std::size_t width, float fill = 0.0f);
  Grid2D(std::size_t height, std::size_t width, std::vector<float> values);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  float& operator()(std::size_t row, std::size_t col) { return values_[row * width_ + col]; }
  float operator()(std::size_t row, std::size_t col) const { return values_[row * width_ + col]; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  bool operator==(const Grid2D&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> values_;
};

/// Dense row-major f32 matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

/// Sums in order for short inputs and pairwise above 2^16 elements, so the
/// result depends only on the values, never on scheduling.
float accumulate(std::span<const float> values);

float dot(std::span<const float> a, std::span<const float> b);
float l2_norm(std::span<const float> v);

float cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Gradient of cosine(a, b) with respect to b, added into `grad_b` scaled by `scale`.
void accumulate_cosine_grad_b(std::span<const float> a, std::span<const float> b, float scale,
                              std::span<float> grad_b);

/// In-place max-subtracted softmax.
void softmax_inplace(std::span<float> values);

/// Softmax over both spatial axes.
Grid2D spatial_softmax(const Grid2D& grid);
Matrix row_softmax(const Matrix& m);

/// log(sum(exp(values))) with max subtraction.
float log_sum_exp(std::span<const float> values);

/// Half-pixel-center (align_corners = false) bilinear resize; only upsampling.
Grid2D bilinear_upsample(const Grid2D& grid, std::size_t height, std::size_t width);

/// Affine map sending min(grid) to lo and max(grid) to hi. A grid whose range
/// is below 1e-12 maps to (lo + hi) / 2 everywhere.
Grid2D minmax_remap(const Grid2D& grid, float lo, float hi);

/// Index of the maximum; ties resolve to the lowest index.
std::size_t argmax_with_tiebreak(std::span<const float> scores);

}  // namespace warpseg
