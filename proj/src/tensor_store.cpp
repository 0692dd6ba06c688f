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

#include "warpseg/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <unordered_set>

namespace warpseg {

namespace {

constexpr std::size_t kMaxRank = 255;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

// Bounds-checked cursor over an encoded container.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  const std::uint8_t* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw ContainerError("corrupt container: unexpected end of data");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint32_t u32() { return get_u32(take(4)); }
  std::uint64_t u64() { return get_u64(take(8)); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

bool known_dtype(std::uint8_t code) { return code <= static_cast<std::uint8_t>(DType::i32); }

// Returns false on overflow.
bool checked_count(std::span<const std::uint64_t> shape, std::uint64_t& count) {
  count = 1;
  for (auto d : shape) {
    if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / d) return false;
    count *= d;
  }
  return true;
}

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::f32: return 4;
    case DType::f16: return 2;
    case DType::u8: return 1;
    case DType::i32: return 4;
  }
  throw ContainerError("unsupported dtype");
}

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::f32: return "f32";
    case DType::f16: return "f16";
    case DType::u8: return "u8";
    case DType::i32: return "i32";
  }
  return "?";
}

float half_to_float(std::uint16_t bits) {
  std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  std::uint32_t exp = (bits >> 10) & 0x1Fu;
  std::uint32_t mant = bits & 0x3FFu;
  std::uint32_t out;
  if (exp == 0) {
    if (mant == 0) {
      out = sign;
    } else {
      // Subnormal half: renormalize into a float exponent.
      int e = -1;
      do {
        mant <<= 1;
        ++e;
      } while ((mant & 0x400u) == 0);
      mant &= 0x3FFu;
      out = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | (mant << 13);
    }
  } else if (exp == 0x1F) {
    out = sign | 0x7F800000u | (mant << 13);
  } else {
    out = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(out);
}

std::uint16_t float_to_half(float value) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const std::uint32_t exp = (x >> 23) & 0xFFu;
  std::uint32_t mant = x & 0x7FFFFFu;

  if (exp == 0xFF) {
    // Keep NaN quiet and non-zero.
    return static_cast<std::uint16_t>(sign | 0x7C00u | (mant ? (0x200u | (mant >> 13)) : 0u));
  }
  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 31) return static_cast<std::uint16_t>(sign | 0x7C00u);
  if (e <= 0) {
    if (e < -10) return static_cast<std::uint16_t>(sign);
    mant |= 0x800000u;
    const int shift = 14 - e;
    std::uint32_t half = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half & 1u))) ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  std::uint32_t half = sign | (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;
  return static_cast<std::uint16_t>(half);
}

std::uint64_t TensorRecord::element_count() const {
  std::uint64_t n = 0;
  if (!checked_count(shape, n)) throw ContainerError("corrupt container: shape overflow in '" + name + "'");
  return n;
}

bool TensorRecord::consistent() const {
  std::uint64_t n = 0;
  if (!checked_count(shape, n)) return false;
  const std::uint64_t size = dtype_size(dtype);
  if (n > std::numeric_limits<std::uint64_t>::max() / size) return false;
  return payload.size() == n * size;
}

TensorRecord TensorRecord::from_f32(std::string name, std::vector<std::uint64_t> shape,
                                    std::span<const float> values) {
  TensorRecord r{std::move(name), DType::f32, std::move(shape), {}};
  if (r.element_count() != values.size())
    throw std::invalid_argument("tensor '" + r.name + "': value count does not match shape");
  r.payload.reserve(values.size() * 4);
  for (float v : values) put_u32(r.payload, std::bit_cast<std::uint32_t>(v));
  return r;
}

TensorRecord TensorRecord::from_f32_as_f16(std::string name, std::vector<std::uint64_t> shape,
                                           std::span<const float> values) {
  TensorRecord r{std::move(name), DType::f16, std::move(shape), {}};
  if (r.element_count() != values.size())
    throw std::invalid_argument("tensor '" + r.name + "': value count does not match shape");
  r.payload.reserve(values.size() * 2);
  for (float v : values) {
    const std::uint16_t h = float_to_half(v);
    r.payload.push_back(static_cast<std::uint8_t>(h & 0xFF));
    r.payload.push_back(static_cast<std::uint8_t>(h >> 8));
  }
  return r;
}

TensorRecord TensorRecord::from_i32(std::string name, std::vector<std::uint64_t> shape,
                                    std::span<const std::int32_t> values) {
  TensorRecord r{std::move(name), DType::i32, std::move(shape), {}};
  if (r.element_count() != values.size())
    throw std::invalid_argument("tensor '" + r.name + "': value count does not match shape");
  r.payload.reserve(values.size() * 4);
  for (auto v : values) put_u32(r.payload, static_cast<std::uint32_t>(v));
  return r;
}

TensorRecord TensorRecord::from_string(std::string name, std::string_view text) {
  TensorRecord r{std::move(name), DType::u8, {text.size()}, {}};
  r.payload.assign(text.begin(), text.end());
  return r;
}

std::vector<float> TensorRecord::to_f32() const {
  if (!consistent()) throw ContainerError("corrupt container: payload size mismatch in '" + name + "'");
  const std::size_t n = payload.size() / dtype_size(dtype);
  std::vector<float> out(n);
  const std::uint8_t* p = payload.data();
  switch (dtype) {
    case DType::f32:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<float>(get_u32(p + 4 * i));
      break;
    case DType::f16:
      for (std::size_t i = 0; i < n; ++i) out[i] = half_to_float(get_u16(p + 2 * i));
      break;
    case DType::u8:
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(p[i]);
      break;
    case DType::i32:
      for (std::size_t i = 0; i < n; ++i)
        out[i] = static_cast<float>(static_cast<std::int32_t>(get_u32(p + 4 * i)));
      break;
  }
  return out;
}

std::vector<std::int32_t> TensorRecord::to_i32() const {
  if (dtype != DType::i32) throw ContainerError("tensor '" + name + "' is not i32");
  if (!consistent()) throw ContainerError("corrupt container: payload size mismatch in '" + name + "'");
  std::vector<std::int32_t> out(payload.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::int32_t>(get_u32(payload.data() + 4 * i));
  return out;
}

std::string TensorRecord::to_string() const {
  if (dtype != DType::u8) throw ContainerError("tensor '" + name + "' is not a u8 string");
  return std::string(payload.begin(), payload.end());
}

std::vector<std::uint8_t> encode_container(std::span<const TensorRecord> records) {
  std::unordered_set<std::string_view> names;
  for (const auto& r : records) {
    if (!names.insert(r.name).second) throw ContainerError("duplicate record name '" + r.name + "'");
    if (r.shape.size() > kMaxRank) throw ContainerError("record '" + r.name + "' exceeds rank 255");
    if (!r.consistent()) throw ContainerError("record '" + r.name + "': payload length does not match shape");
  }
  if (records.size() > std::numeric_limits<std::uint32_t>::max())
    throw ContainerError("too many records");

  std::vector<std::uint8_t> out(kContainerMagic.begin(), kContainerMagic.end());
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<std::uint8_t>(r.dtype));
    out.push_back(static_cast<std::uint8_t>(r.shape.size()));
    for (auto d : r.shape) put_u64(out, d);
    out.insert(out.end(), r.payload.begin(), r.payload.end());
  }
  return out;
}

std::vector<TensorRecord> decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kContainerMagic.size() ||
      !std::equal(kContainerMagic.begin(), kContainerMagic.end(), bytes.begin()))
    throw ContainerError("unrecognized format");

  Reader in(bytes.subspan(kContainerMagic.size()));
  const std::uint32_t count = in.u32();
  std::vector<TensorRecord> records;
  std::unordered_set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    const std::uint32_t name_len = in.u32();
    const std::uint8_t* name = in.take(name_len);
    r.name.assign(reinterpret_cast<const char*>(name), name_len);
    const std::uint8_t code = in.u8();
    if (!known_dtype(code)) throw ContainerError("unsupported dtype " + std::to_string(code) + " in '" + r.name + "'");
    r.dtype = static_cast<DType>(code);
    const std::uint8_t rank = in.u8();
    r.shape.resize(rank);
    for (auto& d : r.shape) d = in.u64();
    std::uint64_t n = 0;
    if (!checked_count(r.shape, n) || n > std::numeric_limits<std::uint64_t>::max() / dtype_size(r.dtype))
      throw ContainerError("corrupt container: shape overflow in '" + r.name + "'");
    const std::uint64_t nbytes = n * dtype_size(r.dtype);
    if (nbytes > std::numeric_limits<std::size_t>::max())
      throw ContainerError("corrupt container: payload too large in '" + r.name + "'");
    const std::uint8_t* payload = in.take(static_cast<std::size_t>(nbytes));
    r.payload.assign(payload, payload + nbytes);
    if (!names.insert(r.name).second) throw ContainerError("corrupt container: duplicate record name '" + r.name + "'");
    records.push_back(std::move(r));
  }
  if (!in.done()) throw ContainerError("corrupt container: trailing bytes");
  return records;
}

void write_container(const std::filesystem::path& path, std::span<const TensorRecord> records) {
  const auto bytes = encode_container(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<TensorRecord> read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

const TensorRecord* find_record(std::span<const TensorRecord> records, std::string_view name) {
  auto it = std::find_if(records.begin(), records.end(), [&](const TensorRecord& r) { return r.name == name; });
  return it == records.end() ? nullptr : &*it;
}

const TensorRecord& require_record(std::span<const TensorRecord> records, std::string_view name) {
  if (const auto* r = find_record(records, name)) return *r;
  throw ContainerError("missing record '" + std::string(name) + "'");
}

}  // namespace warpseg
