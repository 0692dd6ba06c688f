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

#include "warpseg/eval_harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "warpseg/image_io.hpp"

namespace warpseg {

namespace fs = std::filesystem;

ConfusionMatrix::ConfusionMatrix(std::size_t classes, std::optional<std::int32_t> ignore_index)
    : classes_(classes), ignore_(ignore_index), counts_(classes * classes, 0) {
  if (classes == 0) throw std::invalid_argument("ConfusionMatrix needs at least one class");
}

void ConfusionMatrix::update(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("confusion update: prediction and ground truth differ in size");
  const auto c = static_cast<std::int32_t>(classes_);
  // Validate first so a bad mask leaves the counts untouched.
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (ignore_ && gt[i] == *ignore_) continue;
    if (gt[i] < 0 || gt[i] >= c) throw std::out_of_range("out-of-range label " + std::to_string(gt[i]) + " in ground truth");
    if (pred[i] < 0 || pred[i] >= c) throw std::out_of_range("out-of-range label " + std::to_string(pred[i]) + " in prediction");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (ignore_ && gt[i] == *ignore_) continue;
    ++counts_[static_cast<std::size_t>(gt[i]) * classes_ + static_cast<std::size_t>(pred[i])];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_ || other.ignore_ != ignore_)
    throw std::invalid_argument("confusion merge: incompatible matrices");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

IouResult miou(const ConfusionMatrix& cm) {
  const std::size_t c = cm.classes();
  IouResult out;
  out.per_class.resize(c);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::uint64_t tp = cm.at(k, k);
    const std::uint64_t denom = row + col - tp;
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    out.per_class[k] = iou;
    sum += iou;
    ++present;
  }
  if (present == 0) throw std::runtime_error("empty evaluation: no class present in ground truth or prediction");
  out.mean = sum / static_cast<double>(present);
  return out;
}

DatasetClasses read_class_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open class list '" + path.string() + "'");
  DatasetClasses out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    if (line.empty()) continue;
    out.all.push_back(line);
  }
  if (out.all.empty()) throw std::runtime_error("class list '" + path.string() + "' is empty");
  out.has_background = out.all.front() == "background";
  out.foreground.assign(out.all.begin() + (out.has_background ? 1 : 0), out.all.end());
  if (out.foreground.empty()) throw std::runtime_error("class list '" + path.string() + "' has no foreground classes");
  return out;
}

std::vector<std::int32_t> to_dataset_labels(const SegmentationMask& mask, const DatasetClasses& classes) {
  if (!classes.has_background) return mask.labels;
  const auto bg = static_cast<std::int32_t>(classes.foreground.size());
  std::vector<std::int32_t> out(mask.labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.labels[i] == bg ? 0 : mask.labels[i] + 1;
  return out;
}

std::string BenchmarkReport::to_table() const {
  std::ostringstream os;
  std::size_t width = 5;
  for (const auto& n : class_names) width = std::max(width, n.size());
  char buf[64];
  os << "class" << std::string(width - 5, ' ') << "  IoU\n";
  os << std::string(width + 9, '-') << "\n";
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    os << class_names[k] << std::string(width - class_names[k].size(), ' ') << "  ";
    if (iou.per_class[k]) {
      std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * *iou.per_class[k]);
      os << buf << "\n";
    } else {
      os << "   n/a\n";
    }
  }
  os << std::string(width + 9, '-') << "\n";
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * iou.mean);
  os << "mIoU" << std::string(width - 4, ' ') << "  " << buf << "\n";
  os << "images evaluated: " << evaluated.size() << ", skipped: " << skipped.size() << "\n";
  return os.str();
}

BenchmarkReport run_benchmark(const fs::path& dataset_dir, const Engine& engine, const DatasetClasses& classes,
                              const BenchmarkOptions& options) {
  if (engine.vocabulary().names != classes.foreground)
    throw std::invalid_argument("run_benchmark: engine vocabulary does not match the dataset class list");
  if (engine.thresholding() != classes.has_background)
    throw std::invalid_argument("run_benchmark: engine background handling does not match the dataset class list");

  const fs::path ann_dir = dataset_dir / "annotations";
  const fs::path feat_dir = dataset_dir / "features";
  const fs::path img_dir = dataset_dir / "images";
  std::vector<fs::path> annotations;
  if (fs::is_directory(ann_dir))
    for (const auto& e : fs::directory_iterator(ann_dir))
      if (e.is_regular_file() && e.path().extension() == ".png") annotations.push_back(e.path());
  std::sort(annotations.begin(), annotations.end());
  if (annotations.empty()) throw std::runtime_error("empty evaluation: no annotations under '" + ann_dir.string() + "'");

  BenchmarkReport report;
  report.class_names = classes.all;
  report.confusion = ConfusionMatrix(classes.all.size(), options.ignore_index);
  std::string manifest;

  for (const auto& ann_path : annotations) {
    const std::string stem = ann_path.stem().string();
    try {
      const fs::path feat_path = feat_dir / (stem + ".t2d");
      if (!fs::exists(feat_path)) throw std::runtime_error("missing feature container");
      const SampleRecord sample = load_sample(feat_path);
      if (!sample.manifest.empty()) {
        if (manifest.empty()) manifest = sample.manifest;
        else if (sample.manifest != manifest) throw std::runtime_error("export manifest differs from earlier samples");
      }
      const IndexImage gt = read_index_png(ann_path);

      std::optional<RgbImage> image;
      if (engine.options().refine) {
        fs::path img_path;
        for (const char* ext : {".png", ".jpg", ".jpeg"})
          if (fs::exists(img_dir / (stem + ext))) {
            img_path = img_dir / (stem + ext);
            break;
          }
        if (img_path.empty()) throw std::runtime_error("missing image (required for mask refinement)");
        image = read_rgb_image(img_path);
      }

      const SegmentationMask mask = engine.segment(sample, gt.height, gt.width, image ? &*image : nullptr);
      const auto pred = to_dataset_labels(mask, classes);
      const std::vector<std::int32_t> gt_labels(gt.labels.begin(), gt.labels.end());
      ConfusionMatrix local(classes.all.size(), options.ignore_index);
      local.update(pred, gt_labels);
      report.confusion.merge(local);
      report.evaluated.push_back(stem);
    } catch (const std::exception& e) {
      report.skipped.push_back(stem + ": " + e.what());
    }
  }
  report.images = report.evaluated.size();
  if (report.confusion.total() == 0) {
    std::string why = "empty evaluation: no pixels evaluated";
    if (!report.skipped.empty()) why += " (first failure: " + report.skipped.front() + ")";
    throw std::runtime_error(why);
  }
  report.iou = miou(report.confusion);
  return report;
}

}  // namespace warpseg
