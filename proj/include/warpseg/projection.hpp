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

// Learnable text-to-visual warp:
//
//   psi(t) = W_b^T tanh(W_a^T t + b_a) + b_b
//
// with W_a: D_t x D_v and W_b: D_v x D_v. In linear mode the tanh branch and
// second layer are bypassed: psi(t) = W_a^T t + b_a.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "warpseg/core_math.hpp"
#include "warpseg/tensor_store.hpp"

namespace warpseg {

inline constexpr std::int32_t kProjectionFormatVersion = 1;

struct ProjectionParams {
  Matrix w_a;               // D_t x D_v
  std::vector<float> b_a;   // D_v
  Matrix w_b;               // D_v x D_v
  std::vector<float> b_b;   // D_v
  bool linear = false;

  std::size_t text_dim() const { return w_a.rows; }
  std::size_t visual_dim() const { return w_a.cols; }

  /// Shapes agree with (text_dim, visual_dim) and every value is finite.
  bool valid() const;

  bool operator==(const ProjectionParams&) const = default;
};

/// Forward intermediates kept for the backward pass.
struct ProjectionCache {
  std::vector<float> input;           // t
  std::vector<float> pre_activation;  // z = W_a^T t + b_a
  std::vector<float> activation;      // u = tanh(z)
};

/// Gradients with the same shapes as ProjectionParams.
struct ProjectionGrads {
  Matrix w_a;
  std::vector<float> b_a;
  Matrix w_b;
  std::vector<float> b_b;

  static ProjectionGrads zeros_like(const ProjectionParams& params);
  void scale(float factor);
};

struct ProjectionBackward {
  ProjectionGrads grads;
  std::vector<float> grad_input;
};

/// Xavier-uniform weights, zero biases; deterministic in `seed`.
ProjectionParams init_params(std::size_t text_dim, std::size_t visual_dim, std::uint64_t seed, bool linear = false);

std::vector<float> psi_forward(const ProjectionParams& params, std::span<const float> text,
                               ProjectionCache* cache = nullptr);

/// Adds d(loss)/d(params) into `grads` given d(loss)/d(psi(t)); returns d(loss)/dt.
std::vector<float> psi_backward_accumulate(const ProjectionParams& params, const ProjectionCache& cache,
                                           std::span<const float> grad_out, ProjectionGrads& grads);

ProjectionBackward psi_backward(const ProjectionParams& params, const ProjectionCache& cache,
                                std::span<const float> grad_out);

std::vector<TensorRecord> params_to_records(const ProjectionParams& params, bool store_f16 = false);
ProjectionParams params_from_records(std::span<const TensorRecord> records);

/// Writes a .psi.t2d checkpoint. `extra` records (e.g. run metadata) are appended.
void save_params(const std::filesystem::path& path, const ProjectionParams& params, bool store_f16 = false,
                 std::span<const TensorRecord> extra = {});
ProjectionParams load_params(const std::filesystem::path& path);

}  // namespace warpseg
