#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "elchat/dtype.hpp"
#include "elchat/error.hpp"

namespace elchat {

static_assert(std::endian::native == std::endian::little,
              "payload buffers are stored little-endian and used in place");

using Shape = std::vector<std::uint64_t>;

inline std::uint64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1},
                         [](std::uint64_t a, std::uint64_t b) { return a * b; });
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// A named, typed, row-major tensor. `data` holds the raw little-endian payload.
struct Tensor {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<std::uint8_t> data;

  std::uint64_t numel() const { return shape_numel(shape); }
  std::size_t element_size() const { return dtype_size(dtype); }

  void validate() const {
    if (data.size() != numel() * element_size()) {
      throw IntegrityError("tensor '" + name + "': payload has " + std::to_string(data.size()) +
                           " bytes but shape " + shape_str(shape) + " of " +
                           std::string(dtype_name(dtype)) + " needs " +
                           std::to_string(numel() * element_size()));
    }
  }

  float get(std::size_t i) const {
    switch (dtype) {
      case DType::kF32: {
        float v;
        std::memcpy(&v, data.data() + 4 * i, 4);
        return v;
      }
      case DType::kF16: return fp::f16_to_f32(load16(i));
      case DType::kBF16: return fp::bf16_to_f32(load16(i));
    }
    return 0.0f;
  }

  void set(std::size_t i, float v) {
    switch (dtype) {
      case DType::kF32: std::memcpy(data.data() + 4 * i, &v, 4); break;
      case DType::kF16: store16(i, fp::f32_to_f16(v)); break;
      case DType::kBF16: store16(i, fp::f32_to_bf16(v)); break;
    }
  }

  std::vector<float> to_f32() const {
    std::vector<float> out(numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = get(i);
    return out;
  }

  static Tensor from_f32(std::string name, DType dtype, Shape shape, std::span<const float> values) {
    Tensor t{std::move(name), dtype, std::move(shape), {}};
    if (values.size() != t.numel()) {
      throw ShapeError("tensor '" + t.name + "': " + std::to_string(values.size()) +
                       " values for shape " + shape_str(t.shape));
    }
    t.data.resize(values.size() * t.element_size());
    for (std::size_t i = 0; i < values.size(); ++i) t.set(i, values[i]);
    return t;
  }

  /// Raw bytes of `count` consecutive elements starting at element `first`.
  std::span<const std::uint8_t> element_bytes(std::size_t first, std::size_t count) const {
    return std::span<const std::uint8_t>(data).subspan(first * element_size(), count * element_size());
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::uint16_t load16(std::size_t i) const {
    std::uint16_t h;
    std::memcpy(&h, data.data() + 2 * i, 2);
    return h;
  }
  void store16(std::size_t i, std::uint16_t h) { std::memcpy(data.data() + 2 * i, &h, 2); }
};

/// Converts through f32 with round-to-nearest-even. Same-dtype casts return the input untouched.
inline Tensor cast(const Tensor& t, DType target) {
  if (t.dtype == target) return t;
  const auto values = t.to_f32();
  return Tensor::from_f32(t.name, target, t.shape, values);
}

}  // namespace elchat
