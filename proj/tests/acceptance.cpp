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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "synthetic.hpp"
#include "warpseg/eval_harness.hpp"
#include "warpseg/mask_refine.hpp"
#include "warpseg/segmentation.hpp"
#include "warpseg/trainer.hpp"

using namespace warpseg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

void run_check(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    const auto [ok, detail] = body();
    report(name, ok, detail);
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

float uniform(std::mt19937_64& rng, float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng); }

FeatureMap random_features(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t d) {
  FeatureMap f(h, w, d);
  for (auto& x : f.values) x = uniform(rng, -1.0f, 1.0f);
  return f;
}

AttentionStack random_attention(std::mt19937_64& rng, std::size_t n, std::size_t h, std::size_t w) {
  AttentionStack a(n, h, w);
  for (auto& x : a.values) x = uniform(rng, -3.0f, 3.0f);
  return a;
}

// Relative error with the denominator floored at 1e-2, so that components whose
// true value is near zero are judged against the finite-difference truncation
// error instead of their own magnitude.
constexpr double kRelFloor = 1e-2;

std::pair<bool, std::string> gradient_check() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  const std::size_t dt = 8, dv = 8, heads = 3, b = 3;
  double worst = 0, worst_unfloored = 0;
  std::size_t compared = 0;
  for (int n = 0; n < 50; ++n) {
    ProjectionParams p = init_params(dt, dv, rng());
    for (auto& x : p.b_a) x = uniform(rng, -0.5f, 0.5f);
    for (auto& x : p.b_b) x = uniform(rng, -0.5f, 0.5f);
    std::vector<PreparedPair> batch(b);
    std::vector<std::vector<oracle::Vec>> pooled(b);
    std::vector<oracle::Vec> texts(b);
    for (std::size_t i = 0; i < b; ++i) {
      const auto f = random_features(rng, 2, 2, dv);
      const auto a = random_attention(rng, heads, 2, 2);
      batch[i].head_embeddings = pool_all_heads(f, a);
      for (std::size_t k = 0; k < dt; ++k) batch[i].text.push_back(uniform(rng, -1.0f, 1.0f));
      for (std::size_t h = 0; h < heads; ++h)
        pooled[i].push_back(oracle::pool(f, std::vector<float>(a.values.begin() + h * 4, a.values.begin() + (h + 1) * 4)));
      texts[i].assign(batch[i].text.begin(), batch[i].text.end());
    }
    const BatchResult r = batch_loss_and_grads(p, batch, TrainConfig{});
    std::vector<double> analytic;
    for (const auto* v : {&r.grads.w_a.data, &r.grads.b_a, &r.grads.w_b.data, &r.grads.b_b})
      analytic.insert(analytic.end(), v->begin(), v->end());
    auto op = oracle::Params::from(p);
    auto flat = op.flat();
    for (std::size_t k = 0; k < flat.size(); ++k) {
      const double saved = *flat[k];
      *flat[k] = saved + 1e-3;
      const double up = oracle::batch_loss(op, pooled, texts, r.selected_heads);
      *flat[k] = saved - 1e-3;
      const double down = oracle::batch_loss(op, pooled, texts, r.selected_heads);
      *flat[k] = saved;
      const double num = (up - down) / 2e-3;
      const double diff = std::fabs(analytic[k] - num);
      const double mag = std::max(std::fabs(analytic[k]), std::fabs(num));
      worst = std::max(worst, diff / std::max(mag, kRelFloor));
      if (mag > 0) worst_unfloored = std::max(worst_unfloored, diff / mag);
      ++compared;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0,
          "50 instances, " + std::to_string(compared) + " components, max rel err " + fmt("%.3g", worst) +
              " (floor 1e-2; unfloored " + fmt("%.3g", worst_unfloored) + "), " + fmt("%.2f", secs) + " s"};
}

std::pair<bool, std::string> loss_sanity() {
  double worst_single = 0, worst_uniform = 0;
  for (float s : {-1.0f, -0.3f, 0.0f, 0.5f, 1.0f, 7.0f}) {
    Matrix m(1, 1, s);
    worst_single = std::max(worst_single, static_cast<double>(std::fabs(info_nce(m))));
  }
  for (std::size_t b : {2u, 4u, 8u}) {
    Matrix m(b, b, 0.37f);
    worst_uniform = std::max(worst_uniform, std::fabs(info_nce(m) - std::log(static_cast<double>(b))));
  }
  Matrix eye(2, 2, 0.0f);
  eye(0, 0) = eye(1, 1) = 1.0f;
  const double id = info_nce(eye);
  const bool ok = worst_single == 0 && worst_uniform < 1e-6 && std::fabs(id - 0.313262) < 1e-5;
  return {ok, "[[s]] max |L| " + fmt("%.3g", worst_single) + ", uniform max |L - ln B| " + fmt("%.3g", worst_uniform) +
                  ", identity 2x2 " + fmt("%.7f", id)};
}

std::pair<bool, std::string> pooling_oracle() {
  std::mt19937_64 rng(11);
  double worst = 0;
  for (int n = 0; n < 100; ++n) {
    const std::size_t h = 1 + rng() % 7, w = 1 + rng() % 9;
    const auto f = random_features(rng, h, w, 16);
    Grid2D logits(h, w);
    for (auto& x : logits.values()) x = uniform(rng, -4.0f, 4.0f);
    const auto got = pool_by_attention(f, logits);
    const auto v = logits.values();
    const auto want = oracle::pool(f, std::vector<float>(v.begin(), v.end()));
    for (std::size_t d = 0; d < 16; ++d) worst = std::max(worst, std::fabs(got[d] - want[d]));
  }
  return {worst < 1e-6, "100 instances up to 7x9, D_v=16, max abs diff " + fmt("%.3g", worst)};
}

ClassVocabulary random_vocab(std::mt19937_64& rng, const ProjectionParams& p, std::size_t classes) {
  std::vector<std::string> names;
  std::vector<std::vector<float>> emb;
  for (std::size_t k = 0; k < classes; ++k) {
    names.push_back("c" + std::to_string(k));
    std::vector<float> t(p.text_dim());
    for (auto& x : t) x = uniform(rng, -1.0f, 1.0f);
    emb.push_back(t);
  }
  return ClassVocabulary::build(p, names, emb, true);
}

std::pair<bool, std::string> cleaning_identities() {
  std::mt19937_64 rng(12);
  bool lambda_ok = true, onehot_ok = true;
  double worst_row = 0;
  for (int n = 0; n < 50; ++n) {
    const std::size_t h = 1 + rng() % 6, w = 1 + rng() % 6, heads = 1 + rng() % 6, classes = 1 + rng() % 5;
    const auto p = init_params(5, 7, rng());
    const auto vocab = random_vocab(rng, p, classes);
    const auto f = random_features(rng, h, w, 7);
    const auto a = random_attention(rng, heads, h, w);
    const auto raw = similarity_maps(f, vocab);

    SegmentOptions opts;
    opts.background_cleaning = true;
    opts.lambda = 1.0f;
    lambda_ok &= segment_window(f, a, vocab, opts) == raw;

    const Matrix r = head_relevance(f, a, vocab);
    for (std::size_t j = 0; j < r.rows; ++j) {
      double sum = 0;
      for (float x : r.row(j)) sum += x;
      worst_row = std::max(worst_row, std::fabs(sum - 1.0));
    }
    const std::size_t pick = rng() % heads, cls = rng() % classes;
    Matrix onehot(classes, heads, 0.0f);
    onehot(cls, pick) = 1.0f;
    onehot_ok &= class_attention(a, onehot, cls) == a.head(pick);
  }
  return {lambda_ok && onehot_ok && worst_row < 1e-6,
          std::string("lambda=1 exact: ") + (lambda_ok ? "yes" : "no") + ", one-hot exact: " + (onehot_ok ? "yes" : "no") +
              ", max |sum R - 1| " + fmt("%.3g", worst_row)};
}

std::pair<bool, std::string> stitching() {
  std::mt19937_64 rng(13);
  const std::size_t classes = 3, gh = 32, gw = 48, win = 32, patch = 14;
  const std::size_t height = gh * patch, width = gw * patch;

  // Global patch-resolution volume cut into the windows the engine would use.
  SimilarityVolume global(classes, gh, gw);
  for (auto& x : global.values) x = uniform(rng, -1.0f, 1.0f);
  std::vector<PlacedVolume> windows;
  for (std::size_t r0 : window_origins(gh, win, 16))
    for (std::size_t c0 : window_origins(gw, win, 16)) {
      SimilarityVolume v(classes, win, win);
      for (std::size_t m = 0; m < classes; ++m)
        for (std::size_t y = 0; y < win; ++y)
          for (std::size_t x = 0; x < win; ++x) v.at(m, y, x) = global.at(m, r0 + y, c0 + x);
      windows.push_back({r0, c0, v});
    }
  const auto stitched_first = upsample_volume(stitch_windows(windows, gh, gw), height, width);

  SimilarityVolume sum(classes, height, width, 0.0f), count(1, height, width, 0.0f);
  for (const auto& pw : windows) {
    const auto up = upsample_volume(pw.volume, win * patch, win * patch);
    for (std::size_t y = 0; y < win * patch; ++y)
      for (std::size_t x = 0; x < win * patch; ++x) {
        const std::size_t gy = pw.row * patch + y, gx = pw.col * patch + x;
        for (std::size_t m = 0; m < classes; ++m) sum.at(m, gy, gx) += up.at(m, y, x);
        count.at(0, gy, gx) += 1.0f;
      }
  }
  double worst = 0;
  for (std::size_t m = 0; m < classes; ++m)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        worst = std::max(worst, static_cast<double>(std::fabs(stitched_first.at(m, y, x) - sum.at(m, y, x) / count.at(0, y, x))));

  // 448x448: sliding and single-window inference.
  const auto p = init_params(4, 6, 5);
  const auto vocab = random_vocab(rng, p, 3);
  SampleRecord sample;
  sample.image_id = "square";
  sample.patch_size = patch;
  sample.image_height = sample.resized_height = 448;
  sample.image_width = sample.resized_width = 448;
  sample.features = random_features(rng, 32, 32, 6);
  sample.attention = random_attention(rng, 4, 32, 32);
  EngineOptions opts;
  opts.segment.background_cleaning = true;
  const Engine sliding(p, vocab, opts);
  EngineOptions single_opts = opts;
  single_opts.slide_whole_image = false;
  const Engine single(p, vocab, single_opts);
  const bool square_ok = sliding.stitched_volume(sample) == sliding.single_window_volume(sample) &&
                         sliding.segment(sample, 448, 448) == single.segment(sample, 448, 448);

  return {worst < 1e-5 && square_ok, "448x672 max |stitch-then-upsample - upsample-then-average| " + fmt("%.3g", worst) +
                                         " over " + std::to_string(windows.size()) + " windows; 448x448 bitwise: " +
                                         (square_ok ? "yes" : "no")};
}

std::pair<bool, std::string> pamr_properties() {
  std::mt19937_64 rng(14);
  bool fixed_ok = true, bounds_ok = true;
  double worst_affine = 0;
  for (int n = 0; n < 10; ++n) {
    const std::size_t h = 8 + rng() % 24, w = 8 + rng() % 24;
    RgbImage img(h, w);
    for (auto& x : img.values) x = uniform(rng, 0.0f, 1.0f);
    const auto field = compute_affinity(img);

    SimilarityVolume flat(3, h, w);
    for (std::size_t m = 0; m < 3; ++m) {
      const float c = uniform(rng, -2.0f, 2.0f);
      std::fill(flat.plane(m).begin(), flat.plane(m).end(), c);
    }
    fixed_ok &= refine(flat, field, 10) == flat;

    SimilarityVolume v(3, h, w);
    for (auto& x : v.values) x = uniform(rng, -1.0f, 1.0f);
    const float a = uniform(rng, 0.5f, 2.5f), b = uniform(rng, -0.5f, 0.5f);
    auto mapped = v;
    for (auto& x : mapped.values) x = a * x + b;
    const auto r0 = refine(v, field, 10), r1 = refine(mapped, field, 10);
    for (std::size_t i = 0; i < v.values.size(); ++i)
      worst_affine = std::max(worst_affine, static_cast<double>(std::fabs(r1.values[i] - (a * r0.values[i] + b))));

    auto cur = v;
    for (int it = 0; it < 10; ++it) {
      cur = refine(cur, field, 1);
      for (std::size_t m = 0; m < 3; ++m) {
        const auto p0 = v.plane(m);
        const auto [lo, hi] = std::minmax_element(p0.begin(), p0.end());
        for (float x : cur.plane(m)) bounds_ok &= x >= *lo && x <= *hi;
      }
    }
  }
  return {fixed_ok && bounds_ok && worst_affine < 1e-5,
          std::string("constant fixed points exact: ") + (fixed_ok ? "yes" : "no") + ", affine max diff " +
              fmt("%.3g", worst_affine) + ", bounds held: " + (bounds_ok ? "yes" : "no")};
}

std::pair<bool, std::string> miou_oracle() {
  std::mt19937_64 rng(15);
  bool ok = true;
  for (int n = 0; n < 200; ++n) {
    const std::size_t c = 1 + rng() % 5;
    std::vector<std::int32_t> pred(64), gt(64);
    for (std::size_t i = 0; i < 64; ++i) {
      pred[i] = static_cast<std::int32_t>(rng() % c);
      gt[i] = rng() % 8 == 0 ? 255 : static_cast<std::int32_t>(rng() % c);
    }
    ConfusionMatrix cm(c, 255);
    cm.update(pred, gt);
    const auto want = oracle::confusion(pred, gt, c, 255);
    for (std::size_t g = 0; g < c; ++g)
      for (std::size_t p = 0; p < c; ++p) ok &= cm.at(g, p) == want[g * c + p];
    bool any = false;
    for (auto x : gt) any |= x != 255;
    if (any) ok &= miou(cm).mean == oracle::miou(pred, gt, c, 255);
  }
  ConfusionMatrix crafted(2);
  crafted.update(std::vector<std::int32_t>{0, 0, 0, 1, 0, 1, 1, 1}, std::vector<std::int32_t>{0, 0, 0, 0, 1, 1, 1, 1});
  const double v = miou(crafted).mean;
  return {ok && v == 0.6, std::string("200 random pairs exact: ") + (ok ? "yes" : "no") + ", crafted " + fmt("%.17g", v)};
}

std::pair<bool, std::string> synthetic_training() {
  const auto t0 = Clock::now();
  const synth::PipelineSettings settings;
  const auto r = synth::run_pipeline(synth::make_world({}), settings);
  const double secs = seconds_since(t0);
  const double bound = 0.1 * std::log(static_cast<double>(settings.batch));
  const bool ok = r.final_loss < bound && r.test_miou > 0.95 && secs < 60.0;
  return {ok, "B=" + std::to_string(settings.batch) + ", " + std::to_string(settings.steps) + " steps, final loss " +
                  fmt("%.4f", r.final_loss) + " (bound " + fmt("%.4f", bound) + "), held-out mIoU " +
                  fmt("%.4f", r.test_miou) + ", " + fmt("%.2f", secs) + " s"};
}

std::pair<bool, std::string> determinism() {
  const auto world = synth::make_world({});
  const auto a = synth::run_pipeline(world, {});
  const auto b = synth::run_pipeline(world, {});
  const bool ckpt = a.checkpoint_bytes == b.checkpoint_bytes, masks = a.mask_bytes == b.mask_bytes;
  return {ckpt && masks && !a.checkpoint_bytes.empty() && !a.mask_bytes.empty(),
          std::string("checkpoints identical: ") + (ckpt ? "yes" : "no") + " (" +
              std::to_string(a.checkpoint_bytes.size()) + " bytes), masks identical: " + (masks ? "yes" : "no") + " (" +
              std::to_string(a.mask_bytes.size()) + " bytes)"};
}

// Full-scale benchmark numbers need the complete caption corpus and the
// benchmark datasets, so they are out of reach here. What can be checked is
// that the shipped defaults are the full-scale recipe and that the README
// documents it.
std::pair<bool, std::string> full_scale_recipe() {
  const TrainConfig tc;
  const EngineOptions eo;
  const bool defaults = tc.batch_size == 128 && tc.epochs == 100 && tc.learning_rate == 1e-4f &&
                        tc.temperature == 1.0f && tc.aggregation == Aggregation::max_head &&
                        eo.segment.lambda == 5.0f / 6.0f && eo.segment.threshold == 0.55f && eo.window_px == 448 &&
                        eo.stride_px == 224 && eo.pamr.iterations == 10;
  std::ifstream in(std::filesystem::path(WARPSEG_SOURCE_DIR) / "README.md");
  std::stringstream ss;
  ss << in.rdbuf();
  const bool documented = ss.str().find("## Full-scale recipe") != std::string::npos;
  return {defaults && documented, std::string("defaults match the recipe: ") + (defaults ? "yes" : "no") +
                                      ", README recipe section: " + (documented ? "yes" : "no") +
                                      "; benchmark numbers not reproduced (needs full training data)"};
}

}  // namespace

int main() {
  run_check("gradient correctness", gradient_check);
  run_check("loss sanity", loss_sanity);
  run_check("pooling oracle", pooling_oracle);
  run_check("background-cleaning identities", cleaning_identities);
  run_check("stitching/upsample equivalence", stitching);
  run_check("mask refinement properties", pamr_properties);
  run_check("mIoU oracle", miou_oracle);
  run_check("synthetic end-to-end training", synthetic_training);
  run_check("determinism", determinism);
  run_check("full-scale recipe status", full_scale_recipe);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
