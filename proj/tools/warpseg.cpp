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

// warpseg command line: train, segment, eval, inspect.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "warpseg/eval_harness.hpp"
#include "warpseg/image_io.hpp"
#include "warpseg/projection.hpp"
#include "warpseg/sample.hpp"
#include "warpseg/segmentation.hpp"
#include "warpseg/tensor_store.hpp"
#include "warpseg/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace warpseg;

namespace {

struct RunConfig {
  // paths
  std::string dataset;
  std::string checkpoint = "model.psi.t2d";
  std::string output = "out";
  std::string log;
  std::string vocab;
  std::string classes;
  std::string features;
  std::string image;
  // hyperparameters
  float lr = 1e-4f;
  std::size_t batch = 128;
  std::size_t epochs = 100;
  std::size_t max_steps = 0;
  float temperature = 1.0f;
  float lambda = kDefaultLambda;
  float threshold = kDefaultThreshold;
  std::size_t pamr_iterations = 10;
  std::size_t window = kDefaultWindowPx;
  std::size_t stride = kDefaultStridePx;
  std::uint64_t seed = 0;
  // flags
  bool background_cleaning = true;
  bool mask_refinement = false;
  std::string aggregation = "max_head";
  bool linear = false;
  bool f16 = false;
};

json config_json(const RunConfig& c) {
  return json{{"dataset", c.dataset},
              {"checkpoint", c.checkpoint},
              {"output", c.output},
              {"vocab", c.vocab},
              {"classes", c.classes},
              {"features", c.features},
              {"image", c.image},
              {"lr", c.lr},
              {"batch", c.batch},
              {"epochs", c.epochs},
              {"max_steps", c.max_steps},
              {"temperature", c.temperature},
              {"lambda", c.lambda},
              {"threshold", c.threshold},
              {"pamr_iterations", c.pamr_iterations},
              {"window", c.window},
              {"stride", c.stride},
              {"seed", c.seed},
              {"background_cleaning", c.background_cleaning},
              {"mask_refinement", c.mask_refinement},
              {"aggregation", c.aggregation},
              {"linear", c.linear},
              {"f16", c.f16}};
}

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CommandError("cannot write '" + path.string() + "'");
  out << text;
}

EngineOptions engine_options(const RunConfig& c) {
  EngineOptions o;
  o.segment.background_cleaning = c.background_cleaning;
  o.segment.lambda = c.lambda;
  o.segment.threshold = c.threshold;
  o.window_px = c.window;
  o.stride_px = c.stride;
  o.refine = c.mask_refinement;
  o.pamr.iterations = c.pamr_iterations;
  return o;
}

// Looks up every class name in the text-embedding container.
std::vector<std::vector<float>> class_embeddings(const TextEmbeddings& text, const std::vector<std::string>& names,
                                                 const std::string& source) {
  std::vector<std::vector<float>> out;
  std::vector<std::string> missing;
  for (const auto& n : names) {
    if (const auto* v = text.find(n)) out.push_back(*v);
    else missing.push_back(n);
  }
  if (!missing.empty()) {
    std::string msg = "class names not found in '" + source + "':";
    for (const auto& m : missing) msg += " '" + m + "'";
    throw CommandError(msg);
  }
  return out;
}

Engine make_engine(const RunConfig& c, const DatasetClasses& classes) {
  if (c.checkpoint.empty()) throw CommandError("--checkpoint is required");
  if (c.vocab.empty()) throw CommandError("--vocab is required");
  ProjectionParams params = load_params(c.checkpoint);
  const TextEmbeddings text = load_text_embeddings(c.vocab);
  auto embeddings = class_embeddings(text, classes.foreground, c.vocab);
  ClassVocabulary vocab = ClassVocabulary::build(params, classes.foreground, std::move(embeddings), classes.has_background);
  return Engine(std::move(params), std::move(vocab), engine_options(c));
}

int cmd_train(const RunConfig& c) {
  if (c.dataset.empty()) throw CommandError("--dataset is required");
  const auto files = list_containers(c.dataset);
  if (files.empty()) throw CommandError("no .t2d containers in '" + c.dataset + "'");

  std::vector<SampleRecord> samples;
  std::vector<std::string> failures;
  std::string manifest;
  for (const auto& f : files) {
    try {
      SampleRecord s = load_sample(f);
      s.validate();
      if (!s.has_whole_image()) throw ContainerError("no whole-image features");
      if (s.captions.empty()) throw ContainerError("no captions");
      if (!s.manifest.empty()) {
        if (manifest.empty()) manifest = s.manifest;
        else if (s.manifest != manifest) throw ContainerError("export manifest differs from earlier containers");
      }
      samples.push_back(std::move(s));
    } catch (const std::exception& e) {
      failures.push_back(f.filename().string() + ": " + e.what());
    }
  }
  if (!failures.empty()) {
    json err{{"error", "nonconforming containers"}, {"files", failures}};
    std::cerr << err.dump(2) << "\n";
    return 1;
  }

  TrainConfig tc;
  tc.batch_size = c.batch;
  tc.epochs = c.epochs;
  tc.max_steps = c.max_steps;
  tc.learning_rate = c.lr;
  tc.temperature = c.temperature;
  tc.seed = c.seed;
  tc.aggregation = parse_aggregation(c.aggregation);
  tc.linear = c.linear;

  const fs::path ckpt = c.checkpoint;
  const fs::path log_path = c.log.empty() ? fs::path(ckpt.string() + ".log.jsonl") : fs::path(c.log);
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw CommandError("cannot write '" + log_path.string() + "'");

  const TrainResult result = train(samples, tc, nullptr, [&](const EpochLog& e) {
    log << e.to_json_line() << "\n";
    log.flush();
    std::fprintf(stderr, "epoch %zu  steps %zu  loss %.6f\n", e.epoch, e.steps, e.mean_loss);
  });

  const TensorRecord meta = TensorRecord::from_string("meta/config", config_json(c).dump());
  std::vector<TensorRecord> extra{meta};
  if (!manifest.empty()) extra.push_back(TensorRecord::from_string("meta/manifest", manifest));
  save_params(ckpt, result.params, c.f16, extra);
  std::printf("wrote %s (%zu steps)\n", ckpt.string().c_str(), result.steps);
  return 0;
}

int cmd_segment(const RunConfig& c) {
  if (c.features.empty()) throw CommandError("--features is required");
  if (c.classes.empty()) throw CommandError("--classes is required");
  const DatasetClasses classes = read_class_list(c.classes);
  const Engine engine = make_engine(c, classes);

  SampleRecord sample = load_sample(c.features);
  sample.validate();
  std::optional<RgbImage> image;
  if (!c.image.empty()) {
    image = read_rgb_image(c.image);
    if (image->height != sample.image_height || image->width != sample.image_width)
      throw CommandError("image size does not match the feature container's original size");
  }
  if (c.mask_refinement && !image) throw CommandError("--refine needs --image");

  const SegmentationMask mask =
      engine.segment(sample, sample.image_height, sample.image_width, c.mask_refinement ? &*image : nullptr);

  const fs::path out_dir = c.output;
  fs::create_directories(out_dir);
  const std::string stem = fs::path(c.features).stem().string();
  const IndexImage labels = to_index_image(mask);
  write_index_png(out_dir / (stem + ".png"), labels);
  write_rgb_png(out_dir / (stem + "_overlay.png"), render_overlay(labels, image ? &*image : nullptr));

  json names = json::array();
  for (const auto& n : classes.foreground) names.push_back(n);
  json sidecar{{"image_id", sample.image_id},
               {"height", mask.height},
               {"width", mask.width},
               {"classes", names},
               {"background_index", engine.thresholding() ? json(engine.vocabulary().background_index()) : json(nullptr)},
               {"config", config_json(c)}};
  write_text(out_dir / (stem + ".json"), sidecar.dump(2) + "\n");
  std::printf("wrote %s\n", (out_dir / (stem + ".png")).string().c_str());
  return 0;
}

int cmd_eval(const RunConfig& c) {
  if (c.dataset.empty()) throw CommandError("--dataset is required");
  const fs::path root = c.dataset;
  const DatasetClasses classes = read_class_list(c.classes.empty() ? root / "classes.txt" : fs::path(c.classes));
  const Engine engine = make_engine(c, classes);
  const BenchmarkReport report = run_benchmark(root, engine, classes);

  json per_class = json::object();
  for (std::size_t k = 0; k < report.class_names.size(); ++k)
    per_class[report.class_names[k]] = report.iou.per_class[k] ? json(*report.iou.per_class[k]) : json(nullptr);
  json confusion = json::array();
  for (std::size_t g = 0; g < report.confusion.classes(); ++g) {
    json row = json::array();
    for (std::size_t p = 0; p < report.confusion.classes(); ++p) row.push_back(report.confusion.at(g, p));
    confusion.push_back(row);
  }
  json out{{"miou", report.iou.mean},
           {"per_class", per_class},
           {"confusion", confusion},
           {"images", report.images},
           {"evaluated", report.evaluated},
           {"skipped", report.skipped},
           {"config", config_json(c)}};
  const fs::path out_dir = c.output;
  fs::create_directories(out_dir);
  write_text(out_dir / "report.json", out.dump(2) + "\n");
  std::cout << report.to_table();
  return report.skipped.empty() ? 0 : 1;
}

std::string shape_string(const std::vector<std::uint64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + "]";
}

int cmd_inspect(const std::string& path, bool as_json) {
  const auto records = read_container(path);
  json recs = json::array();
  for (const auto& r : records) {
    json j{{"name", r.name}, {"dtype", std::string(dtype_name(r.dtype))}, {"shape", r.shape}};
    if (r.dtype == DType::u8 && r.shape.size() == 1 && r.name.rfind("meta/", 0) == 0) j["text"] = r.to_string();
    else if (r.dtype == DType::i32 && r.element_count() <= 8) j["values"] = r.to_i32();
    recs.push_back(j);
  }
  if (as_json) {
    std::cout << json{{"file", path}, {"records", recs}}.dump(2) << "\n";
    return 0;
  }
  std::cout << path << ": " << records.size() << " records\n";
  for (const auto& j : recs) {
    std::cout << "  " << j["name"].get<std::string>() << "  " << j["dtype"].get<std::string>() << " "
              << shape_string(j["shape"].get<std::vector<std::uint64_t>>());
    if (j.contains("text")) std::cout << "  \"" << j["text"].get<std::string>() << "\"";
    if (j.contains("values")) std::cout << "  " << j["values"].dump();
    std::cout << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"warpseg: open-vocabulary segmentation from frozen backbone tensors"};
  app.set_config("--config", "", "key = value file; command-line flags take precedence");
  app.allow_config_extras(false);
  app.require_subcommand(1);
  app.fallthrough();

  RunConfig c;
  app.add_option("--dataset", c.dataset, "Directory of training containers, or an evaluation dataset root");
  app.add_option("--checkpoint", c.checkpoint, "Projection checkpoint (.psi.t2d)")->capture_default_str();
  app.add_option("--output", c.output, "Output directory")->capture_default_str();
  app.add_option("--log", c.log, "Training log path (default: <checkpoint>.log.jsonl)");
  app.add_option("--vocab", c.vocab, "Text-embedding container with one vector per class name");
  app.add_option("--classes", c.classes, "Class list, one per line; a leading 'background' enables thresholding");
  app.add_option("--features", c.features, "Sample container to segment");
  app.add_option("--image", c.image, "RGB image (overlay and mask refinement)");
  app.add_option("--lr", c.lr, "Adam learning rate")->capture_default_str();
  app.add_option("--batch", c.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  app.add_option("--max-steps", c.max_steps, "Stop after this many optimizer steps (0: no cap)")->capture_default_str();
  app.add_option("--temperature", c.temperature, "Similarity divisor inside the loss")->capture_default_str();
  app.add_option("--lambda", c.lambda, "Weight of raw similarity in background cleaning")
      ->capture_default_str()
      ->check(CLI::Range(0.0f, 1.0f));
  app.add_option("--threshold", c.threshold, "Background threshold on the best class score")->capture_default_str();
  app.add_option("--pamr-iterations", c.pamr_iterations, "Mask refinement iterations")->capture_default_str();
  app.add_option("--window", c.window, "Sliding window size in resized pixels")->capture_default_str();
  app.add_option("--stride", c.stride, "Sliding window stride in resized pixels")->capture_default_str();
  app.add_option("--seed", c.seed, "Initialization and shuffling seed")->capture_default_str();
  app.add_flag("--clean,!--no-clean", c.background_cleaning, "Attention-based background cleaning")
      ->capture_default_str();
  app.add_flag("--refine,!--no-refine", c.mask_refinement, "Pixel-adaptive mask refinement")->capture_default_str();
  app.add_option("--aggregation", c.aggregation, "Head aggregation during training")
      ->capture_default_str()
      ->check(CLI::IsMember({"max_head", "mean_heads", "cls_only"}));
  app.add_flag("--linear", c.linear, "Single affine layer instead of the tanh warp");
  app.add_flag("--f16", c.f16, "Store checkpoint weights as f16");

  auto* train_cmd = app.add_subcommand("train", "Train the text-to-visual projection");
  auto* segment_cmd = app.add_subcommand("segment", "Segment one image from its feature container");
  auto* eval_cmd = app.add_subcommand("eval", "mIoU over an annotated dataset");
  auto* inspect_cmd = app.add_subcommand("inspect", "Print the records of a .t2d container");
  std::string inspect_path;
  bool inspect_json = false;
  inspect_cmd->add_option("file", inspect_path, "Container path")->required();
  inspect_cmd->add_flag("--json", inspect_json, "Machine-readable output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(c);
    if (*segment_cmd) return cmd_segment(c);
    if (*eval_cmd) return cmd_eval(c);
    if (*inspect_cmd) return cmd_inspect(inspect_path, inspect_json);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
