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

// Open-vocabulary inference over precomputed backbone tensors: per-class cosine
// similarity volumes, attention-guided background cleaning, sliding-window
// stitching and the final per-pixel decision.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "warpseg/core_math.hpp"
#include "warpseg/mask_refine.hpp"
#include "warpseg/projection.hpp"
#include "warpseg/sample.hpp"
#include "warpseg/volume.hpp"

namespace warpseg {

inline constexpr float kDefaultLambda = 5.0f / 6.0f;
inline constexpr float kDefaultThreshold = 0.55f;
inline constexpr std::size_t kDefaultWindowPx = 448;
inline constexpr std::size_t kDefaultStridePx = 224;

struct ClassVocabulary {
  std::vector<std::string> names;
  std::vector<std::vector<float>> embeddings;  // text space, D_t
  std::vector<std::vector<float>> projected;   // psi(embedding), D_v
  bool has_background = false;

  std::size_t size() const { return names.size(); }
  /// Mask index used for background pixels when thresholding is active.
  std::size_t background_index() const { return names.size(); }

  static ClassVocabulary build(const ProjectionParams& params, std::vector<std::string> names,
                               std::vector<std::vector<float>> embeddings, bool has_background);
};

struct SegmentOptions {
  bool background_cleaning = false;
  float lambda = kDefaultLambda;
  float threshold = kDefaultThreshold;
};

/// S_j[h,w] = cos(v[h,w], psi(t_j)).
SimilarityVolume similarity_maps(const FeatureMap& features, const ClassVocabulary& vocab);

/// R[j][i] = row-softmax over heads of sim(v^{A_i}, psi(t_j)); M x N.
Matrix head_relevance(const FeatureMap& features, const AttentionStack& attention, const ClassVocabulary& vocab);

/// F_j = sum_i R[j][i] A_i over raw attention logits.
Grid2D class_attention(const AttentionStack& attention, const Matrix& relevance, std::size_t j);

/// Spatial softmax of F_j, then affine remap onto [min S, max S] over all classes and cells.
Grid2D normalize_class_attention(const Grid2D& class_attn, const SimilarityVolume& raw);

/// lambda * S + (1 - lambda) * F per cell.
SimilarityVolume shape_similarity(const SimilarityVolume& raw, std::span<const Grid2D> normalized, float lambda);

/// Patch-resolution volume for one window (cleaned when requested and the
/// vocabulary has a background class).
SimilarityVolume segment_window(const FeatureMap& features, const AttentionStack& attention,
                                const ClassVocabulary& vocab, const SegmentOptions& options);

struct PlacedVolume {
  std::size_t row = 0;  // origin in patch units
  std::size_t col = 0;
  SimilarityVolume volume;
};

/// Per-cell uniform average of all covering windows.
SimilarityVolume stitch_windows(std::span<const PlacedVolume> windows, std::size_t height, std::size_t width);

/// Window origins along one axis (stride <= window): multiples of `stride`, with the last window
/// snapped so that its far edge touches `extent`.
std::vector<std::size_t> window_origins(std::size_t extent, std::size_t window, std::size_t stride);

SimilarityVolume upsample_volume(const SimilarityVolume& volume, std::size_t height, std::size_t width);

/// Argmax per pixel; with thresholding, pixels where every class is below
/// `threshold` get `background_index`.
SegmentationMask decide_mask(const SimilarityVolume& full_res, bool thresholding, float threshold,
                             std::size_t background_index);

SegmentationMask finalize_mask(const SimilarityVolume& volume, std::size_t height, std::size_t width,
                               bool thresholding, float threshold, std::size_t background_index);

/// max_i cos(v^{A_i}, psi(t)).
float score_image_text(const FeatureMap& features, const AttentionStack& attention, const ProjectionParams& params,
                       std::span<const float> text);

/// mean_i v^{A_i}.
std::vector<float> global_image_embedding(const FeatureMap& features, const AttentionStack& attention);

struct EngineOptions {
  SegmentOptions segment;
  std::size_t window_px = kDefaultWindowPx;
  std::size_t stride_px = kDefaultStridePx;
  /// Cut windows out of whole-image features when the sample has no exported windows.
  bool slide_whole_image = true;
  bool refine = false;
  PamrConfig pamr;
};

/// Immutable after construction; safe to share across threads.
class Engine {
 public:
  Engine(ProjectionParams params, ClassVocabulary vocab, EngineOptions options);

  const ClassVocabulary& vocabulary() const { return vocab_; }
  const EngineOptions& options() const { return options_; }
  const ProjectionParams& params() const { return params_; }

  bool thresholding() const { return vocab_.has_background; }

  /// Stitched patch-resolution volume over the resized image's patch grid.
  SimilarityVolume stitched_volume(const SampleRecord& sample) const;

  /// Whole-image single-window volume (no stitching).
  SimilarityVolume single_window_volume(const SampleRecord& sample) const;

  /// Full pipeline at (height, width); `image` (same size) is needed only when refining.
  SegmentationMask segment(const SampleRecord& sample, std::size_t height, std::size_t width,
                           const RgbImage* image = nullptr) const;

 private:
  ProjectionParams params_;
  ClassVocabulary vocab_;
  EngineOptions options_;
};

}  // namespace warpseg
