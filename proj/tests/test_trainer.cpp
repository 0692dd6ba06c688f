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

#include <cmath>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"
#include "warpseg/trainer.hpp"

using namespace warpseg;

namespace {

FeatureMap random_features(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t d) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  FeatureMap f(h, w, d);
  for (auto& x : f.values) x = u(rng);
  return f;
}

Matrix matrix(std::size_t b, std::initializer_list<float> values) {
  Matrix m(b, b);
  std::copy(values.begin(), values.end(), m.data.begin());
  return m;
}

std::vector<oracle::Vec> to_rows(const Matrix& m) {
  std::vector<oracle::Vec> out(m.rows, oracle::Vec(m.cols));
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out[i][j] = m(i, j);
  return out;
}

}  // namespace

TEST_CASE("attention pooling matches the loop oracle") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-3.0f, 3.0f);
  for (int n = 0; n < 50; ++n) {
    const std::size_t h = 1 + rng() % 5, w = 1 + rng() % 5;
    const auto f = random_features(rng, h, w, 6);
    Grid2D a(h, w);
    for (auto& x : a.values()) x = u(rng);
    const auto got = pool_by_attention(f, a);
    const auto want = oracle::pool(f, std::vector<float>(a.values().begin(), a.values().end()));
    for (std::size_t d = 0; d < 6; ++d) CHECK(got[d] == doctest::Approx(want[d]).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("uniform logits average the patches; a dominant logit selects one patch") {
  std::mt19937_64 rng(2);
  const auto f = random_features(rng, 3, 4, 5);
  const auto mean = pool_by_attention(f, Grid2D(3, 4, 1.5f));
  for (std::size_t d = 0; d < 5; ++d) {
    double s = 0;
    for (std::size_t c = 0; c < 12; ++c) s += f.cell(c)[d];
    CHECK(mean[d] == doctest::Approx(s / 12).epsilon(1e-6));
  }
  Grid2D peak(3, 4, 0.0f);
  peak(2, 1) = 200.0f;
  const auto one = pool_by_attention(f, peak);
  for (std::size_t d = 0; d < 5; ++d) CHECK(one[d] == doctest::Approx(f.patch(2, 1)[d]));
  CHECK_THROWS(pool_by_attention(f, Grid2D(2, 4)));
}

TEST_CASE("head selection prefers the lowest index on ties") {
  CHECK(select_best_head(std::vector<float>{0.2f, 0.9f, 0.9f}) == 1);
  CHECK(select_best_head(std::vector<float>{0.5f}) == 0);
}

TEST_CASE("InfoNCE reference values") {
  for (float s : {-3.0f, 0.0f, 0.7f, 12.0f}) CHECK(info_nce(matrix(1, {s})) == 0.0f);
  for (std::size_t b : {2u, 4u, 8u}) {
    Matrix u(b, b, 0.3f);
    CHECK(info_nce(u) == doctest::Approx(std::log(static_cast<double>(b))).epsilon(1e-6));
  }
  CHECK(info_nce(matrix(2, {1, 0, 0, 1})) == doctest::Approx(0.313262).epsilon(1e-5));
}

TEST_CASE("InfoNCE matches the oracle and is invariant to joint permutation") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int n = 0; n < 50; ++n) {
    const std::size_t b = 1 + rng() % 7;
    Matrix m(b, b);
    for (auto& x : m.data) x = u(rng);
    const float l = info_nce(m);
    CHECK(l == doctest::Approx(oracle::info_nce(to_rows(m))).epsilon(1e-5));
    CHECK(l >= 0.0f);
    std::vector<std::size_t> perm(b);
    for (std::size_t i = 0; i < b; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix pm(b, b), tm(b, b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        pm(i, j) = m(perm[i], perm[j]);
        tm(i, j) = m(j, i);
      }
    CHECK(info_nce(pm) == doctest::Approx(l).epsilon(1e-6));
    CHECK(info_nce(tm) == doctest::Approx(l).epsilon(1e-6));
  }
}

TEST_CASE("InfoNCE gradient matches central differences") {
  const Matrix uniform(2, 2, 0.0f);
  const Matrix g = info_nce_backward(uniform);
  CHECK(g(0, 0) == doctest::Approx(-0.25));
  CHECK(g(0, 1) == doctest::Approx(0.25));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int n = 0; n < 20; ++n) {
    const std::size_t b = 1 + rng() % 5;
    Matrix m(b, b);
    for (auto& x : m.data) x = u(rng);
    const Matrix grad = info_nce_backward(m);
    auto rows = to_rows(m);
    double total = 0;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        const double saved = rows[i][j];
        rows[i][j] = saved + 1e-5;
        const double up = oracle::info_nce(rows);
        rows[i][j] = saved - 1e-5;
        const double down = oracle::info_nce(rows);
        rows[i][j] = saved;
        CHECK(grad(i, j) == doctest::Approx((up - down) / 2e-5).epsilon(1e-4).scale(1e-3));
        total += grad(i, j);
      }
    CHECK(total == doctest::Approx(0.0).scale(1.0));  // softmax rows and columns each sum to one
  }
}

TEST_CASE("Adam follows the bias-corrected update") {
  ProjectionParams p = init_params(2, 3, 1);
  const ProjectionParams start = p;
  AdamState s = AdamState::for_params(p, 0.01f);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<double> m(p.w_a.data.size(), 0), v(p.w_a.data.size(), 0), ref(start.w_a.data.begin(), start.w_a.data.end());
  for (int step = 1; step <= 5; ++step) {
    auto g = ProjectionGrads::zeros_like(p);
    for (auto& x : g.w_a.data) x = u(rng);
    adam_step(p, g, s);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g.w_a.data[i];
      v[i] = 0.999 * v[i] + 0.001 * g.w_a.data[i] * g.w_a.data[i];
      const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
      ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.w_a.data[i] == doctest::Approx(ref[i]).epsilon(1e-5));
    }
  }
  CHECK(s.step == 5);
  // Zero gradients leave the biases untouched.
  CHECK(p.b_a == start.b_a);
}

TEST_CASE("first Adam step moves every weight by about lr against the gradient sign") {
  ProjectionParams p = init_params(3, 3, 2);
  const auto before = p;
  AdamState s = AdamState::for_params(p, 1e-4f);
  auto g = ProjectionGrads::zeros_like(p);
  for (std::size_t i = 0; i < g.w_b.data.size(); ++i) g.w_b.data[i] = (i % 2 ? 1.0f : -1.0f) * (0.1f + static_cast<float>(i));
  adam_step(p, g, s);
  for (std::size_t i = 0; i < g.w_b.data.size(); ++i) {
    const float delta = p.w_b.data[i] - before.w_b.data[i];
    CHECK(delta == doctest::Approx(g.w_b.data[i] > 0 ? -1e-4 : 1e-4).epsilon(1e-3));
  }
}

TEST_CASE("batch loss and gradients agree with the double oracle") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int n = 0; n < 5; ++n) {
    ProjectionParams p = init_params(4, 5, 30 + n);
    for (auto& x : p.b_a) x = 0.1f * u(rng);
    std::vector<PreparedPair> batch(3);
    std::vector<std::vector<oracle::Vec>> heads(3);
    std::vector<oracle::Vec> texts(3);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto f = random_features(rng, 2, 3, 5);
      AttentionStack a(2, 2, 3);
      for (auto& x : a.values) x = 2 * u(rng);
      batch[i].head_embeddings = pool_all_heads(f, a);
      batch[i].text = {u(rng), u(rng), u(rng), u(rng)};
      for (std::size_t h = 0; h < 2; ++h)
        heads[i].push_back(oracle::pool(f, std::vector<float>(a.values.begin() + h * 6, a.values.begin() + (h + 1) * 6)));
      texts[i].assign(batch[i].text.begin(), batch[i].text.end());
    }
    const BatchResult r = batch_loss_and_grads(p, batch, TrainConfig{});
    auto op = oracle::Params::from(p);
    CHECK(r.loss == doctest::Approx(oracle::batch_loss(op, heads, texts, r.selected_heads)).epsilon(1e-5));
    // The selected head is the argmax of the oracle similarities.
    for (std::size_t i = 0; i < 3; ++i) {
      const auto proj = oracle::psi(op, texts[i]);
      const double chosen = oracle::cosine(heads[i][r.selected_heads[i]], proj);
      for (const auto& h : heads[i]) CHECK(oracle::cosine(h, proj) <= chosen + 1e-6);
    }
    std::vector<float> analytic;
    for (const auto* v : {&r.grads.w_a.data, &r.grads.b_a, &r.grads.w_b.data, &r.grads.b_b})
      analytic.insert(analytic.end(), v->begin(), v->end());
    auto flat = op.flat();
    for (std::size_t k = 0; k < flat.size(); ++k) {
      const double saved = *flat[k];
      *flat[k] = saved + 1e-5;
      const double up = oracle::batch_loss(op, heads, texts, r.selected_heads);
      *flat[k] = saved - 1e-5;
      const double down = oracle::batch_loss(op, heads, texts, r.selected_heads);
      *flat[k] = saved;
      CHECK(analytic[k] == doctest::Approx((up - down) / 2e-5).epsilon(1e-3).scale(1e-3));
    }
  }
}

TEST_CASE("temperature divides the similarities") {
  std::mt19937_64 rng(7);
  std::vector<PreparedPair> batch(2);
  for (auto& b : batch) {
    b.head_embeddings = {{1.0f, 0.5f, -0.2f}};
    b.text = {0.3f, -0.7f};
  }
  batch[1].head_embeddings = {{-0.4f, 0.9f, 0.1f}};
  const auto p = init_params(2, 3, 3);
  TrainConfig c;
  const auto plain = batch_loss_and_grads(p, batch, c);
  c.temperature = 0.5f;
  const auto sharp = batch_loss_and_grads(p, batch, c);
  for (std::size_t i = 0; i < 4; ++i) CHECK(sharp.sims.data[i] == doctest::Approx(2 * plain.sims.data[i]));
  c.temperature = 0.0f;
  CHECK_THROWS(batch_loss_and_grads(p, batch, c));
}

TEST_CASE("training is deterministic, logs every epoch and lowers the loss") {
  const auto world = synth::make_world({});
  const auto samples = synth::samples_of(synth::make_scenes(world, 32, 3, "s"));
  TrainConfig c;
  c.batch_size = 8;
  c.epochs = 15;
  c.learning_rate = 5e-3f;
  c.seed = 4;
  std::size_t callbacks = 0;
  const auto a = train(samples, c, nullptr, [&](const EpochLog&) { ++callbacks; });
  const auto b = train(samples, c);
  CHECK(a.params == b.params);
  CHECK(a.log.size() == 15);
  CHECK(callbacks == 15);
  CHECK(a.steps == 15 * 4);
  CHECK(a.log.back().mean_loss < a.log.front().mean_loss);
  std::uint64_t picks = 0;
  for (auto h : a.log.back().head_counts) picks += h;
  CHECK(picks == 32);
  const auto line = nlohmann::json::parse(a.log.back().to_json_line());
  CHECK(line["epoch"] == 15);
  CHECK(line["head_histogram"].size() == world.shape.classes);
  double pct = 0;
  for (double x : line["head_percent"]) pct += x;
  CHECK(pct == doctest::Approx(100.0));

  c.seed = 5;
  CHECK_FALSE(train(samples, c).params == a.params);
}

TEST_CASE("zero epochs returns the initialization; max_steps caps training") {
  const auto world = synth::make_world({});
  const auto samples = synth::samples_of(synth::make_scenes(world, 10, 9, "s"));
  TrainConfig c;
  c.epochs = 0;
  c.seed = 12;
  CHECK(train(samples, c).params == init_params(world.shape.text_dim, world.shape.visual_dim, 12));
  const auto custom = init_params(world.shape.text_dim, world.shape.visual_dim, 99);
  CHECK(train(samples, c, &custom).params == custom);

  c.epochs = 10;
  c.batch_size = 4;
  c.max_steps = 7;
  const auto r = train(samples, c);
  CHECK(r.steps == 7);
  CHECK(r.log.size() == 3);
}

TEST_CASE("aggregation modes and dataset validation") {
  const auto world = synth::make_world({});
  auto samples = synth::samples_of(synth::make_scenes(world, 6, 10, "s"));
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 3;
  c.aggregation = Aggregation::mean_heads;
  CHECK(train(samples, c).steps == 4);
  c.aggregation = Aggregation::cls_only;
  CHECK_THROWS(train(samples, c));
  for (auto& s : samples) s.cls_token = std::vector<float>(world.shape.visual_dim, 0.1f);
  CHECK(train(samples, c).steps == 4);

  CHECK(parse_aggregation("max_head") == Aggregation::max_head);
  CHECK(aggregation_name(Aggregation::mean_heads) == "mean_heads");
  CHECK_THROWS(parse_aggregation("median"));

  c.aggregation = Aggregation::max_head;
  samples[2].captions[0].embedding.push_back(0.0f);
  CHECK_THROWS(train(samples, c));
  CHECK_THROWS(train(std::vector<SampleRecord>{}, c));
}
