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

// mIoU benchmark over a dataset directory:
//
//   <root>/classes.txt        one class name per line; a leading "background"
//                             line marks a dataset with a background label 0
//   <root>/annotations/*.png  8-bit index masks (ignore_index excluded)
//   <root>/features/*.t2d     sample containers, same stem as the annotation
//   <root>/images/*.png|jpg   RGB images (needed only for mask refinement)

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "warpseg/segmentation.hpp"

namespace warpseg {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes, std::optional<std::int32_t> ignore_index = std::nullopt);

  std::size_t classes() const { return classes_; }
  std::optional<std::int32_t> ignore_index() const { return ignore_; }

  /// cm[gt][pred] += 1 for every pixel whose gt is not ignored.
  void update(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt);
  void merge(const ConfusionMatrix& other);

  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * classes_ + pred]; }
  std::uint64_t total() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::optional<std::int32_t> ignore_;
  std::vector<std::uint64_t> counts_;
};

struct IouResult {
  double mean = 0.0;
  std::vector<std::optional<double>> per_class;  // nullopt: absent from gt and prediction
};

/// IoU_c = tp / (row_c + col_c - tp); classes with a zero denominator are left
/// out of the mean. Throws "empty evaluation" when every class is absent.
IouResult miou(const ConfusionMatrix& cm);

struct DatasetClasses {
  std::vector<std::string> all;         // as listed in classes.txt, label order
  std::vector<std::string> foreground;  // vocabulary fed to the engine
  bool has_background = false;
};

DatasetClasses read_class_list(const std::filesystem::path& path);

/// Maps an engine mask onto dataset labels: with a background class, class j
/// becomes j + 1 and the engine's background index becomes 0.
std::vector<std::int32_t> to_dataset_labels(const SegmentationMask& mask, const DatasetClasses& classes);

struct BenchmarkOptions {
  std::optional<std::int32_t> ignore_index = 255;
};

struct BenchmarkReport {
  std::vector<std::string> class_names;
  IouResult iou;
  ConfusionMatrix confusion{1};
  std::size_t images = 0;
  std::vector<std::string> evaluated;
  std::vector<std::string> skipped;  // "<stem>: <reason>"

  std::string to_table() const;
};

/// Segments every annotated image and accumulates one confusion matrix, in
/// sorted stem order. Images with missing or unreadable inputs are skipped and
/// listed.
BenchmarkReport run_benchmark(const std::filesystem::path& dataset_dir, const Engine& engine,
                              const DatasetClasses& classes, const BenchmarkOptions& options = {});

}  // namespace warpseg
