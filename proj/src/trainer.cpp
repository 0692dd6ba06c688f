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

#include "warpseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace warpseg {

namespace {

constexpr std::size_t kLargeGrid = std::size_t{1} << 16;
constexpr std::size_t kBlockCells = 256;

// Weighted sum of feature cells over [first, last), accumulated per dimension.
void weighted_cells(const FeatureMap& f, std::span<const float> w, std::size_t first, std::size_t last,
                    std::span<float> out) {
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t c = first; c < last; ++c) {
    const float wc = w[c];
    const auto v = f.cell(c);
    for (std::size_t d = 0; d < f.dim; ++d) out[d] += wc * v[d];
  }
}

// Pairwise reduction over blocks of cells, for very large grids.
void weighted_cells_pairwise(const FeatureMap& f, std::span<const float> w, std::size_t first, std::size_t last,
                             std::span<float> out) {
  if (last - first <= kBlockCells) {
    weighted_cells(f, w, first, last, out);
    return;
  }
  const std::size_t mid = first + (last - first) / 2;
  std::vector<float> right(f.dim);
  weighted_cells_pairwise(f, w, first, mid, out);
  weighted_cells_pairwise(f, w, mid, last, right);
  for (std::size_t d = 0; d < f.dim; ++d) out[d] += right[d];
}

std::size_t draw_index(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[draw_index(rng, i)]);
}

void check_square(const Matrix& sims) {
  if (sims.rows != sims.cols) throw std::invalid_argument("info_nce: similarity matrix must be square");
  if (sims.rows == 0) throw std::invalid_argument("info_nce: empty batch");
}

// Log-softmax normalizers of every row and every column.
void row_col_lse(const Matrix& s, std::vector<float>& row_lse, std::vector<float>& col_lse) {
  const std::size_t b = s.rows;
  row_lse.resize(b);
  col_lse.resize(b);
  std::vector<float> col(b);
  for (std::size_t i = 0; i < b; ++i) {
    row_lse[i] = log_sum_exp(s.row(i));
    for (std::size_t j = 0; j < b; ++j) col[j] = s(j, i);
    col_lse[i] = log_sum_exp(col);
  }
}

}  // namespace

Aggregation parse_aggregation(std::string_view name) {
  if (name == "max_head") return Aggregation::max_head;
  if (name == "mean_heads") return Aggregation::mean_heads;
  if (name == "cls_only") return Aggregation::cls_only;
  throw std::invalid_argument("unknown aggregation '" + std::string(name) + "'");
}

std::string_view aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::max_head: return "max_head";
    case Aggregation::mean_heads: return "mean_heads";
    case Aggregation::cls_only: return "cls_only";
  }
  return "?";
}

std::vector<float> pool_by_attention(const FeatureMap& features, const Grid2D& attn_logits) {
  if (attn_logits.height() != features.height || attn_logits.width() != features.width)
    throw std::invalid_argument("pool_by_attention: attention grid does not match feature grid");
  if (features.cells() == 0) throw std::invalid_argument("pool_by_attention: empty grid");
  const Grid2D weights = spatial_softmax(attn_logits);
  std::vector<float> out(features.dim);
  if (features.cells() > kLargeGrid)
    weighted_cells_pairwise(features, weights.values(), 0, features.cells(), out);
  else
    weighted_cells(features, weights.values(), 0, features.cells(), out);
  return out;
}

std::vector<std::vector<float>> pool_all_heads(const FeatureMap& features, const AttentionStack& attention) {
  if (attention.heads == 0) throw std::invalid_argument("pool_all_heads: no attention heads");
  std::vector<std::vector<float>> out;
  out.reserve(attention.heads);
  for (std::size_t i = 0; i < attention.heads; ++i) out.push_back(pool_by_attention(features, attention.head(i)));
  return out;
}

std::vector<float> head_similarities(const FeatureMap& features, const AttentionStack& attention,
                                     const ProjectionParams& params, std::span<const float> text) {
  const auto projected = psi_forward(params, text);
  const auto pooled = pool_all_heads(features, attention);
  std::vector<float> sims(pooled.size());
  for (std::size_t i = 0; i < pooled.size(); ++i) sims[i] = cosine_similarity(pooled[i], projected);
  return sims;
}

std::size_t select_best_head(std::span<const float> sims) { return argmax_with_tiebreak(sims); }

float info_nce(const Matrix& sims) {
  check_square(sims);
  const std::size_t b = sims.rows;
  std::vector<float> row_lse, col_lse;
  row_col_lse(sims, row_lse, col_lse);
  // Each term is -log softmax(.)_ii >= 0; summing the non-negative terms keeps L >= 0.
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    total += std::max(0.0f, col_lse[i] - sims(i, i));
    total += std::max(0.0f, row_lse[i] - sims(i, i));
  }
  return static_cast<float>(total / (2.0 * static_cast<double>(b)));
}

Matrix info_nce_backward(const Matrix& sims) {
  check_square(sims);
  const std::size_t b = sims.rows;
  std::vector<float> row_lse, col_lse;
  row_col_lse(sims, row_lse, col_lse);
  const float scale = 1.0f / (2.0f * static_cast<float>(b));
  Matrix g(b, b);
  // dL/ds_ab = (softmax over column b at a + softmax over row a at b) / 2B - [a == b] / B
  for (std::size_t a = 0; a < b; ++a) {
    for (std::size_t c = 0; c < b; ++c) {
      const float p_col = std::exp(sims(a, c) - col_lse[c]);
      const float p_row = std::exp(sims(a, c) - row_lse[a]);
      g(a, c) = scale * (p_col + p_row) - (a == c ? 2.0f * scale : 0.0f);
    }
  }
  return g;
}

AdamState AdamState::for_params(const ProjectionParams& params, float learning_rate, float beta1, float beta2,
                                float epsilon) {
  AdamState s;
  s.first = ProjectionGrads::zeros_like(params);
  s.second = ProjectionGrads::zeros_like(params);
  s.learning_rate = learning_rate;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  return s;
}

void adam_step(ProjectionParams& params, const ProjectionGrads& grads, AdamState& state) {
  const auto same = [](const ProjectionGrads& a, const ProjectionParams& p) {
    return a.w_a.data.size() == p.w_a.data.size() && a.b_a.size() == p.b_a.size() &&
           a.w_b.data.size() == p.w_b.data.size() && a.b_b.size() == p.b_b.size();
  };
  if (!same(grads, params) || !same(state.first, params) || !same(state.second, params))
    throw std::invalid_argument("adam_step: gradient or moment shapes do not match params");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta1), t));
  const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta2), t));

  auto update = [&](std::span<float> p, std::span<const float> g, std::span<float> m, std::span<float> v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * g[i] * g[i];
      const float m_hat = m[i] / c1;
      const float v_hat = v[i] / c2;
      p[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  };
  update(params.w_a.data, grads.w_a.data, state.first.w_a.data, state.second.w_a.data);
  update(params.b_a, grads.b_a, state.first.b_a, state.second.b_a);
  update(params.w_b.data, grads.w_b.data, state.first.w_b.data, state.second.w_b.data);
  update(params.b_b, grads.b_b, state.first.b_b, state.second.b_b);
}

BatchResult batch_loss_and_grads(const ProjectionParams& params, std::span<const PreparedPair> batch,
                                 const TrainConfig& config) {
  if (batch.empty()) throw std::invalid_argument("batch_loss_and_grads: empty batch");
  if (!(config.temperature > 0.0f)) throw std::invalid_argument("temperature must be positive");
  const std::size_t b = batch.size();
  const std::size_t dv = params.visual_dim();

  std::vector<ProjectionCache> caches(b);
  std::vector<std::vector<float>> projected(b);
  for (std::size_t j = 0; j < b; ++j) projected[j] = psi_forward(params, batch[j].text, &caches[j]);

  BatchResult result;
  std::vector<std::vector<float>> visual(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& pair = batch[i];
    switch (config.aggregation) {
      case Aggregation::max_head: {
        std::vector<float> sims(pair.head_embeddings.size());
        for (std::size_t k = 0; k < sims.size(); ++k) sims[k] = cosine_similarity(pair.head_embeddings[k], projected[i]);
        const std::size_t best = select_best_head(sims);
        result.selected_heads.push_back(best);
        visual[i] = pair.head_embeddings[best];
        break;
      }
      case Aggregation::mean_heads: {
        visual[i].assign(dv, 0.0f);
        for (const auto& h : pair.head_embeddings)
          for (std::size_t d = 0; d < dv; ++d) visual[i][d] += h[d];
        const float inv = 1.0f / static_cast<float>(pair.head_embeddings.size());
        for (float& x : visual[i]) x *= inv;
        break;
      }
      case Aggregation::cls_only:
        if (pair.cls_token.size() != dv) throw std::invalid_argument("cls_only aggregation requires a cls_token");
        visual[i] = pair.cls_token;
        break;
    }
  }

  const float inv_temp = 1.0f / config.temperature;
  result.sims = Matrix(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) result.sims(i, j) = cosine_similarity(visual[i], projected[j]) * inv_temp;

  result.loss = info_nce(result.sims);
  const Matrix g = info_nce_backward(result.sims);

  result.grads = ProjectionGrads::zeros_like(params);
  std::vector<float> grad_p(dv);
  for (std::size_t j = 0; j < b; ++j) {
    std::fill(grad_p.begin(), grad_p.end(), 0.0f);
    for (std::size_t i = 0; i < b; ++i) accumulate_cosine_grad_b(visual[i], projected[j], g(i, j) * inv_temp, grad_p);
    psi_backward_accumulate(params, caches[j], grad_p, result.grads);
  }
  return result;
}

std::vector<double> EpochLog::head_percentages() const {
  std::uint64_t total = 0;
  for (auto c : head_counts) total += c;
  std::vector<double> out(head_counts.size(), 0.0);
  if (total == 0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 100.0 * static_cast<double>(head_counts[i]) / static_cast<double>(total);
  return out;
}

std::string EpochLog::to_json_line() const {
  std::ostringstream os;
  os.precision(9);
  os << "{\"epoch\":" << epoch << ",\"steps\":" << steps << ",\"mean_loss\":" << mean_loss << ",\"head_histogram\":[";
  for (std::size_t i = 0; i < head_counts.size(); ++i) os << (i ? "," : "") << head_counts[i];
  os << "],\"head_percent\":[";
  const auto pct = head_percentages();
  for (std::size_t i = 0; i < pct.size(); ++i) os << (i ? "," : "") << pct[i];
  os << "]}";
  return os.str();
}

TrainResult train(std::span<const SampleRecord> dataset, const TrainConfig& config, const ProjectionParams* init,
                  const EpochCallback& on_epoch) {
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  if (config.batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");

  const std::size_t dv = dataset.front().features.dim;
  const std::size_t heads = dataset.front().attention.heads;
  std::size_t dt = 0;
  for (const auto& s : dataset) {
    if (!s.has_whole_image()) throw std::invalid_argument("train: sample '" + s.image_id + "' has no whole-image features");
    if (s.captions.empty()) throw std::invalid_argument("train: sample '" + s.image_id + "' has no captions");
    if (dt == 0) dt = s.captions.front().embedding.size();
    if (s.features.dim != dv || s.attention.heads != heads || s.captions.front().embedding.size() != dt)
      throw std::invalid_argument("train: inconsistent D_v/D_t/N in sample '" + s.image_id + "' (expected D_v=" +
                                  std::to_string(dv) + ", D_t=" + std::to_string(dt) + ", N=" +
                                  std::to_string(heads) + ")");
    if (config.aggregation == Aggregation::cls_only && (!s.cls_token || s.cls_token->size() != dv))
      throw std::invalid_argument("train: cls_only aggregation but sample '" + s.image_id + "' has no cls_token");
  }

  TrainResult result;
  if (init) {
    if (init->text_dim() != dt || init->visual_dim() != dv)
      throw std::invalid_argument("train: initial params do not match dataset dimensions");
    result.params = *init;
  } else {
    result.params = init_params(dt, dv, config.seed, config.linear);
  }
  if (config.epochs == 0) return result;

  // Pooled head embeddings are constants of the frozen backbone.
  std::vector<std::vector<std::vector<float>>> pooled;
  pooled.reserve(dataset.size());
  for (const auto& s : dataset) pooled.push_back(pool_all_heads(s.features, s.attention));

  AdamState state = AdamState::for_params(result.params, config.learning_rate, config.beta1, config.beta2, config.epsilon);
  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ull);

  struct PairRef {
    std::size_t sample;
    std::size_t caption;
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<PairRef> pairs;
    for (std::size_t s = 0; s < dataset.size(); ++s) {
      const std::size_t n = dataset[s].captions.size();
      if (config.sample_one_caption) {
        pairs.push_back({s, draw_index(rng, n)});
      } else {
        for (std::size_t c = 0; c < n; ++c) pairs.push_back({s, c});
      }
    }
    shuffle(pairs, rng);

    EpochLog log;
    log.epoch = epoch;
    log.head_counts.assign(heads, 0);
    double loss_sum = 0.0;
    std::size_t pair_count = 0;
    bool capped = false;
    for (std::size_t first = 0; first < pairs.size(); first += config.batch_size) {
      if (config.max_steps != 0 && result.steps >= config.max_steps) {
        capped = true;
        break;
      }
      const std::size_t last = std::min(first + config.batch_size, pairs.size());
      std::vector<PreparedPair> batch;
      batch.reserve(last - first);
      for (std::size_t k = first; k < last; ++k) {
        const auto& ref = pairs[k];
        const auto& s = dataset[ref.sample];
        batch.push_back({pooled[ref.sample], s.cls_token.value_or(std::vector<float>{}),
                         s.captions[ref.caption].embedding});
      }
      const BatchResult br = batch_loss_and_grads(result.params, batch, config);
      adam_step(result.params, br.grads, state);
      ++result.steps;
      ++log.steps;
      loss_sum += static_cast<double>(br.loss) * static_cast<double>(batch.size());
      pair_count += batch.size();
      for (auto h : br.selected_heads) ++log.head_counts[h];
    }
    if (log.steps > 0) {
      log.mean_loss = loss_sum / static_cast<double>(pair_count);
      if (on_epoch) on_epoch(log);
      result.log.push_back(std::move(log));
    }
    if (capped || (config.max_steps != 0 && result.steps >= config.max_steps)) break;
  }
  return result;
}

}  // namespace warpseg
