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

#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "warpseg/mask_refine.hpp"

using namespace warpseg;

namespace {

RgbImage random_image(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  RgbImage img(h, w);
  for (auto& x : img.values) x = u(rng);
  return img;
}

SimilarityVolume random_scores(std::mt19937_64& rng, std::size_t m, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  SimilarityVolume v(m, h, w);
  for (auto& x : v.values) x = u(rng);
  return v;
}

// Affinity weights for one pixel computed directly in double.
std::vector<double> affinity_oracle(const RgbImage& img, long y, long x, const std::vector<NeighborOffset>& offs,
                                    double floor, double scale) {
  const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  std::vector<double> d(offs.size(), -1.0);
  std::vector<double> in;
  for (std::size_t k = 0; k < offs.size(); ++k) {
    const long qy = y + offs[k].dy, qx = x + offs[k].dx;
    if (qy < 0 || qy >= h || qx < 0 || qx >= w) continue;
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c)
      s += std::fabs(static_cast<double>(img.at(y, x, c)) - img.at(static_cast<std::size_t>(qy), static_cast<std::size_t>(qx), c));
    d[k] = s / 3.0;
    in.push_back(d[k]);
  }
  double mean = 0;
  for (double v : in) mean += v;
  mean /= static_cast<double>(in.size());
  double var = 0;
  for (double v : in) var += (v - mean) * (v - mean);
  const double sigma = std::max(std::sqrt(var / static_cast<double>(in.size())), floor);
  std::vector<double> wts(offs.size(), 0.0);
  double z = 0;
  for (std::size_t k = 0; k < offs.size(); ++k)
    if (d[k] >= 0) {
      wts[k] = std::exp(-d[k] / (scale * sigma));
      z += wts[k];
    }
  for (auto& v : wts) v /= z;
  return wts;
}

}  // namespace

TEST_CASE("neighbourhood has eight offsets per dilation") {
  const std::vector<int> dil{1, 2, 4, 8, 12, 24};
  const auto offs = neighbor_offsets(dil);
  CHECK(offs.size() == 48);
  CHECK(offs[0].dy == -1);
  CHECK(offs[0].dx == -1);
  CHECK(offs[47].dy == 24);
  CHECK(offs[47].dx == 24);
  for (const auto& o : offs) CHECK((o.dy != 0 || o.dx != 0));
  CHECK_THROWS(neighbor_offsets(std::vector<int>{0}));
}

TEST_CASE("affinity weights match the direct computation and sum to one") {
  std::mt19937_64 rng(1);
  const auto img = random_image(rng, 9, 11);
  PamrConfig cfg;
  cfg.dilations = {1, 2, 4};
  const auto field = compute_affinity(img, cfg);
  for (long y = 0; y < 9; ++y)
    for (long x = 0; x < 11; ++x) {
      const std::size_t p = static_cast<std::size_t>(y * 11 + x);
      const auto want = affinity_oracle(img, y, x, field.offsets, cfg.sigma_floor, cfg.kernel_scale);
      double sum = field.self_weight[p];
      for (std::size_t k = 0; k < field.slots(); ++k) {
        CHECK(field.weight(p, k) == doctest::Approx(want[k]).epsilon(1e-4).scale(1e-6));
        CHECK(field.weight(p, k) >= 0.0f);
        sum += field.weight(p, k);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
      CHECK(field.self_weight[p] == 0.0f);
    }
}

TEST_CASE("a flat image weights every in-bounds neighbour equally") {
  RgbImage flat(5, 5);
  std::fill(flat.values.begin(), flat.values.end(), 0.4f);
  PamrConfig cfg;
  cfg.dilations = {1};
  const auto field = compute_affinity(flat, cfg);
  CHECK(field.weight(12, 0) == doctest::Approx(1.0 / 8));
  // Corner pixel (0, 0) has three neighbours.
  int in = 0;
  for (std::size_t k = 0; k < 8; ++k)
    if (field.weight(0, k) > 0) {
      CHECK(field.weight(0, k) == doctest::Approx(1.0 / 3));
      ++in;
    }
  CHECK(in == 3);
}

TEST_CASE("an isolated pixel keeps its own value") {
  RgbImage one(1, 1);
  const auto field = compute_affinity(one);
  CHECK(field.self_weight[0] == 1.0f);
  SimilarityVolume v(2, 1, 1);
  v.values = {0.3f, -0.2f};
  CHECK(refine(v, field, 10) == v);
}

TEST_CASE("constant maps are exact fixed points") {
  std::mt19937_64 rng(2);
  for (int n = 0; n < 10; ++n) {
    const auto img = random_image(rng, 7 + rng() % 20, 7 + rng() % 20);
    const auto field = compute_affinity(img);
    SimilarityVolume v(3, img.height, img.width);
    for (std::size_t j = 0; j < 3; ++j) {
      const float c = static_cast<float>(rng() % 1000) / 333.0f - 1.5f;
      std::fill(v.plane(j).begin(), v.plane(j).end(), c);
    }
    CHECK(refine(v, field, 10) == v);
  }
}

TEST_CASE("refinement commutes with affine maps of the scores") {
  std::mt19937_64 rng(3);
  for (int n = 0; n < 10; ++n) {
    const auto img = random_image(rng, 12, 15);
    const auto field = compute_affinity(img);
    const auto v = random_scores(rng, 2, 12, 15);
    const float a = 0.5f + static_cast<float>(rng() % 100) / 50.0f, b = static_cast<float>(rng() % 100) / 100.0f - 0.5f;
    auto mapped = v;
    for (auto& x : mapped.values) x = a * x + b;
    const auto r1 = refine(mapped, field, 10);
    const auto r0 = refine(v, field, 10);
    for (std::size_t i = 0; i < v.values.size(); ++i) CHECK(r1.values[i] == doctest::Approx(a * r0.values[i] + b).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("per-class bounds hold at every iteration") {
  std::mt19937_64 rng(4);
  for (int n = 0; n < 10; ++n) {
    const auto img = random_image(rng, 16, 16);
    const auto field = compute_affinity(img);
    auto v = random_scores(rng, 3, 16, 16);
    std::vector<std::pair<float, float>> bounds;
    for (std::size_t j = 0; j < 3; ++j) {
      const auto p = v.plane(j);
      bounds.push_back({*std::min_element(p.begin(), p.end()), *std::max_element(p.begin(), p.end())});
    }
    for (int it = 0; it < 10; ++it) {
      v = refine(v, field, 1);
      for (std::size_t j = 0; j < 3; ++j)
        for (float x : v.plane(j)) {
          CHECK(x >= bounds[j].first);
          CHECK(x <= bounds[j].second);
        }
    }
  }
}

TEST_CASE("piecewise-constant scores aligned with a colour edge stay put") {
  RgbImage img(20, 20);
  SimilarityVolume v(1, 20, 20);
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 20; ++x) {
      const bool right = x >= 10;
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = right ? 0.9f : 0.1f;
      v.at(0, y, x) = right ? 1.0f : 0.0f;
    }
  const auto out = refine(v, compute_affinity(img), 10);
  for (std::size_t i = 0; i < v.values.size(); ++i) CHECK(out.values[i] == doctest::Approx(v.values[i]).epsilon(1e-6).scale(1.0));
}

TEST_CASE("refinement pulls a stray score toward its colour region") {
  RgbImage img(9, 9);
  std::fill(img.values.begin(), img.values.end(), 0.5f);
  SimilarityVolume v(1, 9, 9, 0.0f);
  v.at(0, 4, 4) = 1.0f;
  const auto out = refine(v, compute_affinity(img), 1);
  CHECK(out.at(0, 4, 4) < 0.2f);
  CHECK_THROWS(refine(SimilarityVolume(1, 8, 9), compute_affinity(img), 1));
  CHECK(refine(v, compute_affinity(img), 0) == v);
}
