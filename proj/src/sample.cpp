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

#include "warpseg/sample.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace warpseg {

namespace {

std::uint64_t u64(std::size_t v) { return static_cast<std::uint64_t>(v); }

std::int32_t i32(std::size_t v) { return static_cast<std::int32_t>(v); }

TensorRecord float_record(std::string name, std::vector<std::uint64_t> shape, std::span<const float> v, bool f16) {
  return f16 ? TensorRecord::from_f32_as_f16(std::move(name), std::move(shape), v)
             : TensorRecord::from_f32(std::move(name), std::move(shape), v);
}

std::pair<std::size_t, std::size_t> read_pair(const TensorRecord& r) {
  const auto v = r.to_i32();
  if (v.size() != 2 || v[0] < 0 || v[1] < 0) throw ContainerError("record '" + r.name + "' must hold two non-negative i32");
  return {static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1])};
}

FeatureMap read_features(const TensorRecord& r) {
  if (r.shape.size() != 3) throw ContainerError("record '" + r.name + "' must have rank 3 [h, w, D]");
  FeatureMap f;
  f.height = r.shape[0];
  f.width = r.shape[1];
  f.dim = r.shape[2];
  f.values = r.to_f32();
  return f;
}

AttentionStack read_attention(const TensorRecord& r) {
  if (r.shape.size() != 3) throw ContainerError("record '" + r.name + "' must have rank 3 [N, h, w]");
  AttentionStack a;
  a.heads = r.shape[0];
  a.height = r.shape[1];
  a.width = r.shape[2];
  a.values = r.to_f32();
  return a;
}

void check_pair(const FeatureMap& f, const AttentionStack& a, const std::string& where) {
  if (f.height == 0 || f.width == 0 || f.dim == 0) throw ContainerError(where + ": empty feature map");
  if (a.heads == 0) throw ContainerError(where + ": no attention heads");
  if (a.height != f.height || a.width != f.width)
    throw ContainerError(where + ": attention grid " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                         " does not match feature grid " + std::to_string(f.height) + "x" + std::to_string(f.width));
}

}  // namespace

FeatureMap FeatureMap::crop(std::size_t row, std::size_t col, std::size_t h, std::size_t w) const {
  if (row + h > height || col + w > width) throw std::out_of_range("FeatureMap::crop outside the grid");
  FeatureMap out(h, w, dim);
  for (std::size_t r = 0; r < h; ++r) {
    const float* src = values.data() + ((row + r) * width + col) * dim;
    std::copy(src, src + w * dim, out.values.data() + r * w * dim);
  }
  return out;
}

Grid2D AttentionStack::head(std::size_t index) const {
  if (index >= heads) throw std::out_of_range("attention head index out of range");
  const auto first = values.begin() + static_cast<std::ptrdiff_t>(index * height * width);
  return Grid2D(height, width, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(height * width)));
}

void AttentionStack::set_head(std::size_t index, const Grid2D& grid) {
  if (index >= heads || grid.height() != height || grid.width() != width)
    throw std::invalid_argument("AttentionStack::set_head: shape mismatch");
  std::copy(grid.values().begin(), grid.values().end(), values.begin() + static_cast<std::ptrdiff_t>(index * height * width));
}

AttentionStack AttentionStack::crop(std::size_t row, std::size_t col, std::size_t h, std::size_t w) const {
  if (row + h > height || col + w > width) throw std::out_of_range("AttentionStack::crop outside the grid");
  AttentionStack out(heads, h, w);
  for (std::size_t n = 0; n < heads; ++n)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        out.values[(n * h + r) * w + c] = values[(n * height + row + r) * width + col + c];
  return out;
}

std::size_t SampleRecord::visual_dim() const {
  if (has_whole_image()) return features.dim;
  return windows.empty() ? 0 : windows.front().features.dim;
}

std::size_t SampleRecord::head_count() const {
  if (has_whole_image()) return attention.heads;
  return windows.empty() ? 0 : windows.front().attention.heads;
}

void SampleRecord::validate() const {
  const std::string where = "sample '" + image_id + "'";
  if (patch_size == 0) throw ContainerError(where + ": patch size must be positive");
  if (!has_whole_image() && windows.empty()) throw ContainerError(where + ": no features or windows");
  if (has_whole_image()) {
    check_pair(features, attention, where);
    if (resized_height / patch_size != features.height || resized_width / patch_size != features.width)
      throw ContainerError(where + ": feature grid does not match resized size / patch size");
  }
  const std::size_t dv = visual_dim(), n = head_count();
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const auto& w = windows[k];
    const std::string wname = where + " window " + std::to_string(k);
    check_pair(w.features, w.attention, wname);
    if (w.features.dim != dv || w.attention.heads != n) throw ContainerError(wname + ": inconsistent D_v or head count");
    if (w.origin_y % patch_size != 0 || w.origin_x % patch_size != 0)
      throw ContainerError(wname + ": origin is not a multiple of the patch size");
    if (w.origin_y / patch_size + w.features.height > resized_height / patch_size ||
        w.origin_x / patch_size + w.features.width > resized_width / patch_size)
      throw ContainerError(wname + ": extends past the resized image");
  }
  if (cls_token && cls_token->size() != dv) throw ContainerError(where + ": cls_token dimension mismatch");
  for (const auto& c : captions)
    if (c.embedding.empty() || c.embedding.size() != captions.front().embedding.size())
      throw ContainerError(where + ": caption embeddings do not share D_t");
}

std::vector<TensorRecord> sample_to_records(const SampleRecord& s, bool features_f16) {
  s.validate();
  std::vector<TensorRecord> out;
  out.push_back(TensorRecord::from_string("meta/image_id", s.image_id));
  if (!s.manifest.empty()) out.push_back(TensorRecord::from_string("meta/manifest", s.manifest));
  const std::int32_t size[2] = {i32(s.image_height), i32(s.image_width)};
  const std::int32_t resized[2] = {i32(s.resized_height), i32(s.resized_width)};
  const std::int32_t patch[1] = {i32(s.patch_size)};
  out.push_back(TensorRecord::from_i32("image_size", {2}, size));
  out.push_back(TensorRecord::from_i32("resized_size", {2}, resized));
  out.push_back(TensorRecord::from_i32("patch_size", {1}, patch));
  if (s.has_whole_image()) {
    out.push_back(float_record("features", {u64(s.features.height), u64(s.features.width), u64(s.features.dim)},
                               s.features.values, features_f16));
    out.push_back(TensorRecord::from_f32("attn_logits", {u64(s.attention.heads), u64(s.attention.height), u64(s.attention.width)},
                                         s.attention.values));
  }
  if (s.cls_token) out.push_back(float_record("cls_token", {u64(s.cls_token->size())}, *s.cls_token, features_f16));
  for (std::size_t k = 0; k < s.captions.size(); ++k) {
    const std::string prefix = "captions/" + std::to_string(k) + "/";
    out.push_back(TensorRecord::from_string(prefix + "text", s.captions[k].text));
    out.push_back(TensorRecord::from_f32(prefix + "embedding", {u64(s.captions[k].embedding.size())}, s.captions[k].embedding));
  }
  for (std::size_t k = 0; k < s.windows.size(); ++k) {
    const auto& w = s.windows[k];
    const std::string prefix = "windows/" + std::to_string(k) + "/";
    const std::int32_t origin[2] = {i32(w.origin_y), i32(w.origin_x)};
    out.push_back(TensorRecord::from_i32(prefix + "origin", {2}, origin));
    out.push_back(float_record(prefix + "features", {u64(w.features.height), u64(w.features.width), u64(w.features.dim)},
                               w.features.values, features_f16));
    out.push_back(TensorRecord::from_f32(prefix + "attn_logits",
                                         {u64(w.attention.heads), u64(w.attention.height), u64(w.attention.width)},
                                         w.attention.values));
  }
  return out;
}

SampleRecord sample_from_records(std::span<const TensorRecord> records) {
  SampleRecord s;
  if (const auto* r = find_record(records, "meta/image_id")) s.image_id = r->to_string();
  if (const auto* r = find_record(records, "meta/manifest")) s.manifest = r->to_string();
  std::tie(s.image_height, s.image_width) = read_pair(require_record(records, "image_size"));
  const auto patch = require_record(records, "patch_size").to_i32();
  if (patch.size() != 1 || patch[0] <= 0) throw ContainerError("record 'patch_size' must hold one positive i32");
  s.patch_size = static_cast<std::size_t>(patch[0]);

  if (const auto* r = find_record(records, "features")) {
    s.features = read_features(*r);
    s.attention = read_attention(require_record(records, "attn_logits"));
  }
  if (const auto* r = find_record(records, "resized_size")) {
    std::tie(s.resized_height, s.resized_width) = read_pair(*r);
  } else if (s.has_whole_image()) {
    s.resized_height = s.features.height * s.patch_size;
    s.resized_width = s.features.width * s.patch_size;
  } else {
    throw ContainerError("missing record 'resized_size'");
  }
  if (const auto* r = find_record(records, "cls_token")) s.cls_token = r->to_f32();

  for (std::size_t k = 0;; ++k) {
    const std::string prefix = "captions/" + std::to_string(k) + "/";
    const auto* text = find_record(records, prefix + "text");
    if (!text) break;
    s.captions.push_back({text->to_string(), require_record(records, prefix + "embedding").to_f32()});
  }
  for (std::size_t k = 0;; ++k) {
    const std::string prefix = "windows/" + std::to_string(k) + "/";
    const auto* origin = find_record(records, prefix + "origin");
    if (!origin) break;
    FeatureWindow w;
    std::tie(w.origin_y, w.origin_x) = read_pair(*origin);
    w.features = read_features(require_record(records, prefix + "features"));
    w.attention = read_attention(require_record(records, prefix + "attn_logits"));
    s.windows.push_back(std::move(w));
  }
  s.validate();
  return s;
}

void save_sample(const std::filesystem::path& path, const SampleRecord& sample, bool features_f16) {
  write_container(path, sample_to_records(sample, features_f16));
}

SampleRecord load_sample(const std::filesystem::path& path) {
  try {
    return sample_from_records(read_container(path));
  } catch (const ContainerError& e) {
    throw ContainerError(path.filename().string() + ": " + e.what());
  }
}

const std::vector<float>* TextEmbeddings::find(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return &vectors[i];
  return nullptr;
}

TextEmbeddings text_embeddings_from_records(std::span<const TensorRecord> records) {
  TextEmbeddings out;
  for (const auto& r : records) {
    if (r.name.rfind("meta/", 0) == 0) continue;
    if (r.shape.size() != 1 || (r.dtype != DType::f32 && r.dtype != DType::f16))
      throw ContainerError("text embedding '" + r.name + "' must be a rank-1 float tensor");
    if (!out.vectors.empty() && r.shape[0] != out.vectors.front().size())
      throw ContainerError("text embedding '" + r.name + "' does not share D_t with the others");
    out.names.push_back(r.name);
    out.vectors.push_back(r.to_f32());
  }
  return out;
}

std::vector<TensorRecord> text_embeddings_to_records(const TextEmbeddings& text) {
  std::vector<TensorRecord> out;
  for (std::size_t i = 0; i < text.names.size(); ++i)
    out.push_back(TensorRecord::from_f32(text.names[i], {u64(text.vectors[i].size())}, text.vectors[i]));
  return out;
}

TextEmbeddings load_text_embeddings(const std::filesystem::path& path) {
  return text_embeddings_from_records(read_container(path));
}

std::vector<std::filesystem::path> list_containers(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: '" + dir.string() + "'");
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".t2d") out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace warpseg
