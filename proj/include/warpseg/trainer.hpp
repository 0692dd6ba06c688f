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

// Contrastive alignment of the projection against attention-pooled visual
// embeddings. Backbone features and attention maps are frozen inputs; only the
// projection parameters receive gradients.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "warpseg/core_math.hpp"
#include "warpseg/projection.hpp"
#include "warpseg/sample.hpp"

namespace warpseg {

/// How the per-head pooled embeddings of an image are reduced to one visual
/// embedding for the contrastive pair.
enum class Aggregation { max_head, mean_heads, cls_only };

Aggregation parse_aggregation(std::string_view name);
std::string_view aggregation_name(Aggregation a);

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  std::size_t max_steps = 0;  // 0 = no cap
  float learning_rate = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  float temperature = 1.0f;
  std::uint64_t seed = 0;
  Aggregation aggregation = Aggregation::max_head;
  bool sample_one_caption = true;  // false: every caption is a pair each epoch
  bool linear = false;
};

/// Attention-weighted average of the feature map: sum_hw v[h,w] softmax(A)[h,w].
std::vector<float> pool_by_attention(const FeatureMap& features, const Grid2D& attn_logits);

/// Pooled embedding for every head, [N][D_v].
std::vector<std::vector<float>> pool_all_heads(const FeatureMap& features, const AttentionStack& attention);

std::vector<float> head_similarities(const FeatureMap& features, const AttentionStack& attention,
                                     const ProjectionParams& params, std::span<const float> text);

std::size_t select_best_head(std::span<const float> sims);

/// Symmetric InfoNCE over a B x B matrix with sims[i][j] = sim(v_i, t_j).
float info_nce(const Matrix& sims);
/// d(info_nce)/d(sims).
Matrix info_nce_backward(const Matrix& sims);

struct AdamState {
  ProjectionGrads first;
  ProjectionGrads second;
  std::uint64_t step = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  float learning_rate = 1e-4f;

  static AdamState for_params(const ProjectionParams& params, float learning_rate = 1e-4f, float beta1 = 0.9f,
                              float beta2 = 0.999f, float epsilon = 1e-8f);
};

void adam_step(ProjectionParams& params, const ProjectionGrads& grads, AdamState& state);

/// One image-text pair with the backbone side already reduced to per-head
/// pooled embeddings (constant during training).
struct PreparedPair {
  std::vector<std::vector<float>> head_embeddings;  // [N][D_v]
  std::vector<float> cls_token;                     // only for Aggregation::cls_only
  std::vector<float> text;                          // [D_t]
};

struct BatchResult {
  float loss = 0.0f;
  ProjectionGrads grads;
  std::vector<std::size_t> selected_heads;  // empty unless max_head
  Matrix sims;                              // temperature-scaled B x B
};

/// Forward + backward for one batch: select heads, build the B x B similarity
/// matrix, InfoNCE, backprop through cosine into the projection.
BatchResult batch_loss_and_grads(const ProjectionParams& params, std::span<const PreparedPair> batch,
                                 const TrainConfig& config);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double mean_loss = 0.0;
  std::vector<std::uint64_t> head_counts;

  std::vector<double> head_percentages() const;
  /// Single-line JSON record.
  std::string to_json_line() const;
};

struct TrainResult {
  ProjectionParams params;
  std::vector<EpochLog> log;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains from `init` (or a fresh Xavier init seeded by config.seed when null).
TrainResult train(std::span<const SampleRecord> dataset, const TrainConfig& config,
                  const ProjectionParams* init = nullptr, const EpochCallback& on_epoch = {});

}  // namespace warpseg
