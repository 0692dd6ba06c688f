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

// Binary container for named dense tensors (.t2d).
//
// Layout, all integers little-endian:
//   magic    8 bytes  "T2DTNSR1"
//   count    u32
//   per record:
//     name_len u32, name bytes (UTF-8)
//     dtype    u8   (0 = f32, 1 = f16, 2 = u8, 3 = i32)
//     rank     u8
//     dims     rank x u64
//     payload  product(dims) * dtype_size bytes

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace warpseg {

inline constexpr std::string_view kContainerMagic = "T2DTNSR1";

enum class DType : std::uint8_t { f32 = 0, f16 = 1, u8 = 2, i32 = 3 };

std::size_t dtype_size(DType dtype);
std::string_view dtype_name(DType dtype);

class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorRecord {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> payload;

  std::uint64_t element_count() const;

  /// Checks payload length against shape and dtype.
  bool consistent() const;

  bool operator==(const TensorRecord&) const = default;

  static TensorRecord from_f32(std::string name, std::vector<std::uint64_t> shape,
                               std::span<const float> values);
  /// Narrows to IEEE half with round-to-nearest-even.
  static TensorRecord from_f32_as_f16(std::string name, std::vector<std::uint64_t> shape,
                                      std::span<const float> values);
  static TensorRecord from_i32(std::string name, std::vector<std::uint64_t> shape,
                               std::span<const std::int32_t> values);
  /// Stores UTF-8 text as a rank-1 u8 tensor.
  static TensorRecord from_string(std::string name, std::string_view text);

  /// Widens f16/u8/i32 payloads; f32 is copied as-is.
  std::vector<float> to_f32() const;
  std::vector<std::int32_t> to_i32() const;
  std::string to_string() const;
};

float half_to_float(std::uint16_t bits);
std::uint16_t float_to_half(float value);

std::vector<std::uint8_t> encode_container(std::span<const TensorRecord> records);
std::vector<TensorRecord> decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, std::span<const TensorRecord> records);
std::vector<TensorRecord> read_container(const std::filesystem::path& path);

const TensorRecord* find_record(std::span<const TensorRecord> records, std::string_view name);
/// Throws ContainerError naming the missing record.
const TensorRecord& require_record(std::span<const TensorRecord> records, std::string_view name);

}  // namespace warpseg
