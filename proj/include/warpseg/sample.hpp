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

// In-memory views of exported backbone tensors and their .t2d schema.
//
// Sample container records:
//   meta/image_id            u8 text
//   meta/manifest            u8 JSON (optional, exporter manifest)
//   image_size               i32 [2]   original H, W in pixels
//   resized_size             i32 [2]   H, W after the exporter's resize (optional)
//   patch_size               i32 [1]
//   features                 f32|f16 [h_p, w_p, D_v]
//   attn_logits              f32|f16 [N, h_p, w_p]   pre-softmax CLS->patch
//   cls_token                f32|f16 [D_v]            (optional)
//   captions/<k>/text        u8 text
//   captions/<k>/embedding   f32|f16 [D_t]
//   windows/<k>/origin       i32 [2]   window top-left in resized pixels (y, x)
//   windows/<k>/features     f32|f16 [h_w, w_w, D_v]
//   windows/<k>/attn_logits  f32|f16 [N, h_w, w_w]
//
// A container may carry whole-image tensors, windows, or both.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "warpseg/core_math.hpp"
#include "warpseg/tensor_store.hpp"

namespace warpseg {

/// Per-patch backbone embeddings, row-major [height][width][dim].
struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  FeatureMap() = default;
  FeatureMap(std::size_t h, std::size_t w, std::size_t d) : height(h), width(w), dim(d), values(h * w * d, 0.0f) {}

  std::size_t cells() const { return height * width; }
  std::span<float> patch(std::size_t row, std::size_t col) { return {values.data() + (row * width + col) * dim, dim}; }
  std::span<const float> patch(std::size_t row, std::size_t col) const {
    return {values.data() + (row * width + col) * dim, dim};
  }
  std::span<const float> cell(std::size_t index) const { return {values.data() + index * dim, dim}; }

  FeatureMap crop(std::size_t row, std::size_t col, std::size_t h, std::size_t w) const;
  bool operator==(const FeatureMap&) const = default;
};

/// N per-head CLS-to-patch attention logit maps, row-major [head][height][width].
struct AttentionStack {
  std::size_t heads = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  AttentionStack() = default;
  AttentionStack(std::size_t n, std::size_t h, std::size_t w) : heads(n), height(h), width(w), values(n * h * w, 0.0f) {}

  Grid2D head(std::size_t index) const;
  void set_head(std::size_t index, const Grid2D& grid);
  AttentionStack crop(std::size_t row, std::size_t col, std::size_t h, std::size_t w) const;
  bool operator==(const AttentionStack&) const = default;
};

struct Caption {
  std::string text;
  std::vector<float> embedding;
  bool operator==(const Caption&) const = default;
};

/// Backbone tensors for one inference window; origin in resized-image pixels.
struct FeatureWindow {
  std::size_t origin_y = 0;
  std::size_t origin_x = 0;
  FeatureMap features;
  AttentionStack attention;
  bool operator==(const FeatureWindow&) const = default;
};

struct SampleRecord {
  std::string image_id;
  std::size_t image_height = 0;  // original pixels
  std::size_t image_width = 0;
  std::size_t resized_height = 0;
  std::size_t resized_width = 0;
  std::size_t patch_size = 0;
  FeatureMap features;
  AttentionStack attention;
  std::optional<std::vector<float>> cls_token;
  std::vector<Caption> captions;
  std::vector<FeatureWindow> windows;
  std::string manifest;

  bool has_whole_image() const { return features.cells() > 0; }
  std::size_t visual_dim() const;
  std::size_t head_count() const;

  /// Throws ContainerError describing the first violated invariant.
  void validate() const;

  bool operator==(const SampleRecord&) const = default;
};

std::vector<TensorRecord> sample_to_records(const SampleRecord& sample, bool features_f16 = false);
SampleRecord sample_from_records(std::span<const TensorRecord> records);

void save_sample(const std::filesystem::path& path, const SampleRecord& sample, bool features_f16 = false);
SampleRecord load_sample(const std::filesystem::path& path);

/// Named text embeddings (one rank-1 record per string, name = the string).
struct TextEmbeddings {
  std::vector<std::string> names;
  std::vector<std::vector<float>> vectors;

  const std::vector<float>* find(std::string_view name) const;
};

TextEmbeddings text_embeddings_from_records(std::span<const TensorRecord> records);
std::vector<TensorRecord> text_embeddings_to_records(const TextEmbeddings& text);
TextEmbeddings load_text_embeddings(const std::filesystem::path& path);

/// Sorted list of `.t2d` files in `dir` (non-recursive).
std::vector<std::filesystem::path> list_containers(const std::filesystem::path& dir);

}  // namespace warpseg
