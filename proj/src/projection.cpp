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

#include "warpseg/projection.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace warpseg {

namespace {

// Uniform in [lo, hi) from the top 24 bits of a 64-bit draw. std::mt19937_64
// is fully specified, so checkpoints do not depend on the standard library.
float uniform(std::mt19937_64& rng, float lo, float hi) {
  const float u = static_cast<float>(rng() >> 40) * (1.0f / 16777216.0f);
  return lo + (hi - lo) * u;
}

void xavier_fill(Matrix& m, std::mt19937_64& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(m.rows + m.cols));
  for (float& v : m.data) v = uniform(rng, -bound, bound);
}

bool all_finite(std::span<const float> v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

std::vector<float> read_vector(std::span<const TensorRecord> records, const char* name, std::size_t n) {
  const auto& r = require_record(records, name);
  if (r.shape != std::vector<std::uint64_t>{n})
    throw ContainerError(std::string("record '") + name + "' has shape inconsistent with declared dims");
  return r.to_f32();
}

Matrix read_matrix(std::span<const TensorRecord> records, const char* name, std::size_t rows, std::size_t cols) {
  const auto& r = require_record(records, name);
  if (r.shape != std::vector<std::uint64_t>{rows, cols})
    throw ContainerError(std::string("record '") + name + "' has shape inconsistent with declared dims");
  Matrix m(rows, cols);
  m.data = r.to_f32();
  return m;
}

}  // namespace

bool ProjectionParams::valid() const {
  const std::size_t dt = text_dim(), dv = visual_dim();
  if (dt == 0 || dv == 0) return false;
  if (w_a.data.size() != dt * dv || b_a.size() != dv) return false;
  if (w_b.rows != dv || w_b.cols != dv || w_b.data.size() != dv * dv || b_b.size() != dv) return false;
  return all_finite(w_a.data) && all_finite(b_a) && all_finite(w_b.data) && all_finite(b_b);
}

ProjectionGrads ProjectionGrads::zeros_like(const ProjectionParams& params) {
  return {Matrix(params.w_a.rows, params.w_a.cols), std::vector<float>(params.b_a.size(), 0.0f),
          Matrix(params.w_b.rows, params.w_b.cols), std::vector<float>(params.b_b.size(), 0.0f)};
}

void ProjectionGrads::scale(float factor) {
  for (float& v : w_a.data) v *= factor;
  for (float& v : b_a) v *= factor;
  for (float& v : w_b.data) v *= factor;
  for (float& v : b_b) v *= factor;
}

ProjectionParams init_params(std::size_t text_dim, std::size_t visual_dim, std::uint64_t seed, bool linear) {
  if (text_dim == 0 || visual_dim == 0) throw std::invalid_argument("init_params: dimensions must be >= 1");
  ProjectionParams p{Matrix(text_dim, visual_dim), std::vector<float>(visual_dim, 0.0f), Matrix(visual_dim, visual_dim),
                     std::vector<float>(visual_dim, 0.0f), linear};
  std::mt19937_64 rng(seed);
  xavier_fill(p.w_a, rng);
  xavier_fill(p.w_b, rng);
  return p;
}

std::vector<float> psi_forward(const ProjectionParams& params, std::span<const float> text, ProjectionCache* cache) {
  const std::size_t dt = params.text_dim(), dv = params.visual_dim();
  if (text.size() != dt)
    throw std::invalid_argument("psi_forward: text embedding has dimension " + std::to_string(text.size()) +
                                ", expected " + std::to_string(dt));

  std::vector<float> z(params.b_a);
  for (std::size_t i = 0; i < dt; ++i) {
    const float ti = text[i];
    if (ti == 0.0f) continue;
    const auto row = params.w_a.row(i);
    for (std::size_t k = 0; k < dv; ++k) z[k] += row[k] * ti;
  }

  std::vector<float> out;
  std::vector<float> u;
  if (params.linear) {
    out = z;
  } else {
    u.resize(dv);
    for (std::size_t k = 0; k < dv; ++k) u[k] = std::tanh(z[k]);
    out = params.b_b;
    for (std::size_t k = 0; k < dv; ++k) {
      const float uk = u[k];
      if (uk == 0.0f) continue;
      const auto row = params.w_b.row(k);
      for (std::size_t m = 0; m < dv; ++m) out[m] += row[m] * uk;
    }
  }

  if (cache) {
    cache->input.assign(text.begin(), text.end());
    cache->pre_activation = std::move(z);
    cache->activation = std::move(u);
  }
  return out;
}

std::vector<float> psi_backward_accumulate(const ProjectionParams& params, const ProjectionCache& cache,
                                           std::span<const float> grad_out, ProjectionGrads& grads) {
  const std::size_t dt = params.text_dim(), dv = params.visual_dim();
  if (grad_out.size() != dv || cache.input.size() != dt || cache.pre_activation.size() != dv ||
      (!params.linear && cache.activation.size() != dv))
    throw std::invalid_argument("psi_backward: stale cache or gradient shape mismatch");
  if (grads.w_a.data.size() != dt * dv || grads.w_b.data.size() != dv * dv)
    throw std::invalid_argument("psi_backward: gradient buffers do not match params");

  std::vector<float> grad_z(dv);
  if (params.linear) {
    grad_z.assign(grad_out.begin(), grad_out.end());
  } else {
    const auto& u = cache.activation;
    // grad_W_b = u grad_out^T, grad_b_b = grad_out, grad_u = W_b grad_out
    for (std::size_t k = 0; k < dv; ++k) {
      auto grow = grads.w_b.row(k);
      const auto prow = params.w_b.row(k);
      float gu = 0.0f;
      for (std::size_t m = 0; m < dv; ++m) {
        grow[m] += u[k] * grad_out[m];
        gu += prow[m] * grad_out[m];
      }
      grad_z[k] = gu * (1.0f - u[k] * u[k]);
    }
    for (std::size_t m = 0; m < dv; ++m) grads.b_b[m] += grad_out[m];
  }

  // grad_W_a = t grad_z^T, grad_b_a = grad_z, grad_t = W_a grad_z
  std::vector<float> grad_t(dt, 0.0f);
  for (std::size_t i = 0; i < dt; ++i) {
    auto grow = grads.w_a.row(i);
    const auto prow = params.w_a.row(i);
    const float ti = cache.input[i];
    float gt = 0.0f;
    for (std::size_t k = 0; k < dv; ++k) {
      grow[k] += ti * grad_z[k];
      gt += prow[k] * grad_z[k];
    }
    grad_t[i] = gt;
  }
  for (std::size_t k = 0; k < dv; ++k) grads.b_a[k] += grad_z[k];
  return grad_t;
}

ProjectionBackward psi_backward(const ProjectionParams& params, const ProjectionCache& cache,
                                std::span<const float> grad_out) {
  ProjectionBackward result{ProjectionGrads::zeros_like(params), {}};
  result.grad_input = psi_backward_accumulate(params, cache, grad_out, result.grads);
  return result;
}

std::vector<TensorRecord> params_to_records(const ProjectionParams& params, bool store_f16) {
  if (!params.valid()) throw std::invalid_argument("params_to_records: invalid projection parameters");
  const std::uint64_t dt = params.text_dim(), dv = params.visual_dim();
  auto make = [store_f16](std::string name, std::vector<std::uint64_t> shape, std::span<const float> v) {
    return store_f16 ? TensorRecord::from_f32_as_f16(std::move(name), std::move(shape), v)
                     : TensorRecord::from_f32(std::move(name), std::move(shape), v);
  };
  const std::int32_t meta[4] = {static_cast<std::int32_t>(dt), static_cast<std::int32_t>(dv),
                                kProjectionFormatVersion, params.linear ? 1 : 0};
  std::vector<TensorRecord> out;
  out.push_back(TensorRecord::from_i32("meta", {4}, meta));
  out.push_back(make("W_a", {dt, dv}, params.w_a.data));
  out.push_back(make("b_a", {dv}, params.b_a));
  out.push_back(make("W_b", {dv, dv}, params.w_b.data));
  out.push_back(make("b_b", {dv}, params.b_b));
  return out;
}

ProjectionParams params_from_records(std::span<const TensorRecord> records) {
  const auto meta = require_record(records, "meta").to_i32();
  if (meta.size() < 3) throw ContainerError("projection metadata record is too short");
  if (meta[2] != kProjectionFormatVersion)
    throw ContainerError("unsupported projection format version " + std::to_string(meta[2]));
  if (meta[0] < 1 || meta[1] < 1) throw ContainerError("projection metadata declares empty dimensions");
  const auto dt = static_cast<std::size_t>(meta[0]);
  const auto dv = static_cast<std::size_t>(meta[1]);

  ProjectionParams p;
  p.w_a = read_matrix(records, "W_a", dt, dv);
  p.b_a = read_vector(records, "b_a", dv);
  p.w_b = read_matrix(records, "W_b", dv, dv);
  p.b_b = read_vector(records, "b_b", dv);
  p.linear = meta.size() > 3 && meta[3] != 0;
  if (!p.valid()) throw ContainerError("projection parameters contain non-finite values");
  return p;
}

void save_params(const std::filesystem::path& path, const ProjectionParams& params, bool store_f16,
                 std::span<const TensorRecord> extra) {
  auto records = params_to_records(params, store_f16);
  records.insert(records.end(), extra.begin(), extra.end());
  write_container(path, records);
}

ProjectionParams load_params(const std::filesystem::path& path) { return params_from_records(read_container(path)); }

}  // namespace warpseg
