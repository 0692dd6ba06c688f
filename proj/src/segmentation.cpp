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

#include "warpseg/segmentation.hpp"

#include <algorithm>
#include <stdexcept>

#include "warpseg/trainer.hpp"

namespace warpseg {

Grid2D SimilarityVolume::map(std::size_t j) const {
  if (j >= classes) throw std::out_of_range("SimilarityVolume::map: class index out of range");
  const auto p = plane(j);
  return Grid2D(height, width, std::vector<float>(p.begin(), p.end()));
}

void SimilarityVolume::set_map(std::size_t j, const Grid2D& grid) {
  if (j >= classes || grid.height() != height || grid.width() != width)
    throw std::invalid_argument("SimilarityVolume::set_map: shape mismatch");
  std::copy(grid.values().begin(), grid.values().end(), plane(j).begin());
}

ClassVocabulary ClassVocabulary::build(const ProjectionParams& params, std::vector<std::string> names,
                                       std::vector<std::vector<float>> embeddings, bool has_background) {
  if (names.empty()) throw std::invalid_argument("vocabulary needs at least one class");
  if (names.size() != embeddings.size()) throw std::invalid_argument("vocabulary: names and embeddings differ in count");
  ClassVocabulary v;
  v.names = std::move(names);
  v.embeddings = std::move(embeddings);
  v.has_background = has_background;
  v.projected.reserve(v.embeddings.size());
  for (const auto& e : v.embeddings) v.projected.push_back(psi_forward(params, e));
  return v;
}

SimilarityVolume similarity_maps(const FeatureMap& features, const ClassVocabulary& vocab) {
  SimilarityVolume out(vocab.size(), features.height, features.width);
  for (std::size_t j = 0; j < vocab.size(); ++j) {
    if (vocab.projected[j].size() != features.dim)
      throw std::invalid_argument("similarity_maps: class '" + vocab.names[j] + "' has D_v " +
                                  std::to_string(vocab.projected[j].size()) + ", features have " +
                                  std::to_string(features.dim));
  }
  for (std::size_t r = 0; r < features.height; ++r) {
    for (std::size_t c = 0; c < features.width; ++c) {
      const auto v = features.patch(r, c);
      for (std::size_t j = 0; j < vocab.size(); ++j) {
        try {
          out.at(j, r, c) = cosine_similarity(v, vocab.projected[j]);
        } catch (const DegenerateVectorError& e) {
          throw DegenerateVectorError(std::string(e.what()) + " at patch (" + std::to_string(r) + ", " +
                                      std::to_string(c) + ") for class '" + vocab.names[j] + "'");
        }
      }
    }
  }
  return out;
}

Matrix head_relevance(const FeatureMap& features, const AttentionStack& attention, const ClassVocabulary& vocab) {
  const auto pooled = pool_all_heads(features, attention);
  Matrix r(vocab.size(), pooled.size());
  for (std::size_t j = 0; j < vocab.size(); ++j)
    for (std::size_t i = 0; i < pooled.size(); ++i) r(j, i) = cosine_similarity(pooled[i], vocab.projected[j]);
  return row_softmax(r);
}

Grid2D class_attention(const AttentionStack& attention, const Matrix& relevance, std::size_t j) {
  if (j >= relevance.rows) throw std::out_of_range("class_attention: class index out of range");
  if (relevance.cols != attention.heads) throw std::invalid_argument("class_attention: relevance columns != heads");
  Grid2D out(attention.height, attention.width);
  const std::size_t cells = attention.height * attention.width;
  auto dst = out.values();
  for (std::size_t i = 0; i < attention.heads; ++i) {
    const float weight = relevance(j, i);
    const float* a = attention.values.data() + i * cells;
    for (std::size_t k = 0; k < cells; ++k) dst[k] += weight * a[k];
  }
  return out;
}

Grid2D normalize_class_attention(const Grid2D& class_attn, const SimilarityVolume& raw) {
  if (raw.values.empty()) throw std::invalid_argument("normalize_class_attention: empty similarity volume");
  const auto [mn, mx] = std::minmax_element(raw.values.begin(), raw.values.end());
  return minmax_remap(spatial_softmax(class_attn), *mn, *mx);
}

SimilarityVolume shape_similarity(const SimilarityVolume& raw, std::span<const Grid2D> normalized, float lambda) {
  if (!(lambda >= 0.0f && lambda <= 1.0f)) throw std::invalid_argument("shape_similarity: lambda must lie in [0, 1]");
  if (normalized.size() != raw.classes) throw std::invalid_argument("shape_similarity: one attention map per class required");
  SimilarityVolume out = raw;
  if (lambda == 1.0f) return out;
  for (std::size_t j = 0; j < raw.classes; ++j) {
    const auto& f = normalized[j];
    if (f.height() != raw.height || f.width() != raw.width)
      throw std::invalid_argument("shape_similarity: attention map shape mismatch");
    auto dst = out.plane(j);
    const auto fv = f.values();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      const float s = dst[k];
      if (lambda == 0.0f) {
        dst[k] = fv[k];
        continue;
      }
      const float v = lambda * s + (1.0f - lambda) * fv[k];
      dst[k] = std::clamp(v, std::min(s, fv[k]), std::max(s, fv[k]));
    }
  }
  return out;
}

SimilarityVolume segment_window(const FeatureMap& features, const AttentionStack& attention,
                                const ClassVocabulary& vocab, const SegmentOptions& options) {
  if (options.background_cleaning && vocab.size() == 0)
    throw std::invalid_argument("background cleaning requested with no foreground classes");
  SimilarityVolume raw = similarity_maps(features, vocab);
  if (!options.background_cleaning || !vocab.has_background) return raw;

  const Matrix relevance = head_relevance(features, attention, vocab);
  std::vector<Grid2D> normalized;
  normalized.reserve(vocab.size());
  for (std::size_t j = 0; j < vocab.size(); ++j)
    normalized.push_back(normalize_class_attention(class_attention(attention, relevance, j), raw));
  return shape_similarity(raw, normalized, options.lambda);
}

SimilarityVolume stitch_windows(std::span<const PlacedVolume> windows, std::size_t height, std::size_t width) {
  if (windows.empty()) throw std::invalid_argument("stitch_windows: no windows");
  const std::size_t classes = windows.front().volume.classes;
  SimilarityVolume sum(classes, height, width);
  std::vector<std::uint32_t> count(height * width, 0);
  for (const auto& w : windows) {
    const auto& v = w.volume;
    if (v.classes != classes) throw std::invalid_argument("stitch_windows: windows disagree on class count");
    if (w.row + v.height > height || w.col + v.width > width)
      throw std::invalid_argument("stitch_windows: window extends past the canvas");
    for (std::size_t r = 0; r < v.height; ++r) {
      for (std::size_t c = 0; c < v.width; ++c) {
        const std::size_t cell = (w.row + r) * width + (w.col + c);
        const bool first = count[cell] == 0;
        for (std::size_t j = 0; j < classes; ++j) {
          float& dst = sum.values[j * height * width + cell];
          dst = first ? v.at(j, r, c) : dst + v.at(j, r, c);
        }
        ++count[cell];
      }
    }
  }
  for (std::size_t cell = 0; cell < count.size(); ++cell) {
    if (count[cell] == 0)
      throw std::logic_error("stitch_windows: cell (" + std::to_string(cell / width) + ", " +
                             std::to_string(cell % width) + ") is not covered by any window");
    if (count[cell] == 1) continue;
    const auto n = static_cast<float>(count[cell]);
    for (std::size_t j = 0; j < classes; ++j) sum.values[j * height * width + cell] /= n;
  }
  return sum;
}

std::vector<std::size_t> window_origins(std::size_t extent, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw std::invalid_argument("window_origins: window and stride must be positive");
  if (stride > window) throw std::invalid_argument("window_origins: stride larger than the window leaves gaps");
  if (extent <= window) return {0};
  const std::size_t count = (extent - window + stride - 1) / stride + 1;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t far = std::min(i * stride + window, extent);
    const std::size_t origin = far - window;
    if (out.empty() || out.back() != origin) out.push_back(origin);
  }
  return out;
}

SimilarityVolume upsample_volume(const SimilarityVolume& volume, std::size_t height, std::size_t width) {
  SimilarityVolume out(volume.classes, height, width);
  for (std::size_t j = 0; j < volume.classes; ++j) out.set_map(j, bilinear_upsample(volume.map(j), height, width));
  return out;
}

SegmentationMask decide_mask(const SimilarityVolume& full_res, bool thresholding, float threshold,
                             std::size_t background_index) {
  if (full_res.classes == 0) throw std::invalid_argument("decide_mask: empty volume");
  SegmentationMask mask{full_res.height, full_res.width, std::vector<std::int32_t>(full_res.height * full_res.width)};
  const std::size_t cells = full_res.height * full_res.width;
  std::vector<float> scores(full_res.classes);
  for (std::size_t p = 0; p < cells; ++p) {
    for (std::size_t j = 0; j < full_res.classes; ++j) scores[j] = full_res.values[j * cells + p];
    const std::size_t best = argmax_with_tiebreak(scores);
    if (thresholding && scores[best] < threshold)
      mask.labels[p] = static_cast<std::int32_t>(background_index);
    else
      mask.labels[p] = static_cast<std::int32_t>(best);
  }
  return mask;
}

SegmentationMask finalize_mask(const SimilarityVolume& volume, std::size_t height, std::size_t width,
                               bool thresholding, float threshold, std::size_t background_index) {
  return decide_mask(upsample_volume(volume, height, width), thresholding, threshold, background_index);
}

float score_image_text(const FeatureMap& features, const AttentionStack& attention, const ProjectionParams& params,
                       std::span<const float> text) {
  const auto sims = head_similarities(features, attention, params, text);
  return *std::max_element(sims.begin(), sims.end());
}

std::vector<float> global_image_embedding(const FeatureMap& features, const AttentionStack& attention) {
  if (attention.heads == 0) throw std::invalid_argument("global_image_embedding: no attention heads");
  const auto pooled = pool_all_heads(features, attention);
  std::vector<float> out(features.dim, 0.0f);
  for (const auto& p : pooled)
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += p[d];
  const float inv = 1.0f / static_cast<float>(pooled.size());
  for (float& x : out) x *= inv;
  return out;
}

Engine::Engine(ProjectionParams params, ClassVocabulary vocab, EngineOptions options)
    : params_(std::move(params)), vocab_(std::move(vocab)), options_(std::move(options)) {
  if (!params_.valid()) throw std::invalid_argument("Engine: invalid projection parameters");
  if (vocab_.size() == 0) throw std::invalid_argument("Engine: empty vocabulary");
  const auto& s = options_.segment;
  if (!(s.lambda >= 0.0f && s.lambda <= 1.0f)) throw std::invalid_argument("Engine: lambda must lie in [0, 1]");
  if (options_.window_px == 0 || options_.stride_px == 0) throw std::invalid_argument("Engine: window and stride must be positive");
  if (options_.stride_px > options_.window_px) throw std::invalid_argument("Engine: stride must not exceed the window");
}

SimilarityVolume Engine::single_window_volume(const SampleRecord& sample) const {
  if (!sample.has_whole_image()) throw std::invalid_argument("sample '" + sample.image_id + "' has no whole-image features");
  return segment_window(sample.features, sample.attention, vocab_, options_.segment);
}

SimilarityVolume Engine::stitched_volume(const SampleRecord& sample) const {
  const std::size_t p = sample.patch_size;
  const std::size_t grid_h = sample.resized_height / p;
  const std::size_t grid_w = sample.resized_width / p;
  std::vector<PlacedVolume> placed;

  if (!sample.windows.empty()) {
    for (const auto& w : sample.windows)
      placed.push_back({w.origin_y / p, w.origin_x / p, segment_window(w.features, w.attention, vocab_, options_.segment)});
    return stitch_windows(placed, grid_h, grid_w);
  }
  if (!options_.slide_whole_image) return single_window_volume(sample);

  const std::size_t win = std::max<std::size_t>(1, options_.window_px / p);
  const std::size_t stride = std::max<std::size_t>(1, options_.stride_px / p);
  const auto& f = sample.features;
  const auto rows = window_origins(f.height, win, stride);
  const auto cols = window_origins(f.width, win, stride);
  for (auto r : rows) {
    for (auto c : cols) {
      const std::size_t h = std::min(win, f.height - r), w = std::min(win, f.width - c);
      placed.push_back({r, c, segment_window(f.crop(r, c, h, w), sample.attention.crop(r, c, h, w), vocab_, options_.segment)});
    }
  }
  return stitch_windows(placed, f.height, f.width);
}

SegmentationMask Engine::segment(const SampleRecord& sample, std::size_t height, std::size_t width,
                                 const RgbImage* image) const {
  SimilarityVolume full = upsample_volume(stitched_volume(sample), height, width);
  if (options_.refine && options_.pamr.iterations > 0) {
    if (!image) throw std::invalid_argument("mask refinement requires the RGB image");
    if (image->height != height || image->width != width)
      throw std::invalid_argument("mask refinement: image is " + std::to_string(image->height) + "x" +
                                  std::to_string(image->width) + ", mask is " + std::to_string(height) + "x" +
                                  std::to_string(width));
    full = refine(full, compute_affinity(*image, options_.pamr), options_.pamr.iterations);
  }
  return decide_mask(full, thresholding(), options_.segment.threshold, vocab_.background_index());
}

}  // namespace warpseg
