#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "optb/errors.hpp"

namespace optb {

// Element storage format. Single is IEEE 754 binary32, Half is binary16.
// Half is storage only: every kernel computes in Single and converts at the
// edges, so there is no half-precision ALU to specify.
enum class ElementFormat : std::uint8_t { Single, Half };

constexpr std::size_t format_byte_width(ElementFormat f) {
  return f == ElementFormat::Single ? 4 : 2;
}

const char* format_name(ElementFormat f);

// binary32 -> binary16 with round-to-nearest-even. Values beyond the Half
// range (|x| >= 65520 after rounding) become infinity.
std::uint16_t float_to_half(float value);

// binary16 -> binary32, exact for every Half value.
float half_to_float(std::uint16_t bits);

using Shape = std::vector<std::size_t>;

std::size_t shape_element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense n-dimensional array, row-major, contiguous. Values are plain data:
// copies are deep and instances are safe to hand between threads.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, ElementFormat format = ElementFormat::Single);
  static Tensor from_values(Shape shape, std::span<const float> values);
  static Tensor scalar_like(float value);  // shape {1,1} convenience

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  ElementFormat format() const { return format_; }
  bool empty() const { return shape_.empty(); }

  std::size_t element_count() const;
  std::size_t byte_size() const { return element_count() * format_byte_width(format_); }

  // Single-format buffers. Throws if the tensor is Half.
  std::span<float> values();
  std::span<const float> values() const;

  // Half-format buffers. Throws if the tensor is Single.
  std::span<std::uint16_t> half_bits();
  std::span<const std::uint16_t> half_bits() const;

  // Element read regardless of format.
  float value_at(std::size_t flat_index) const;

private:
  Shape shape_;
  ElementFormat format_ = ElementFormat::Single;
  std::vector<float> single_;
  std::vector<std::uint16_t> half_;
};

// Format conversion. Single -> Half rounds to nearest even; Half -> Single is
// exact; converting to the current format copies.
Tensor convert(const Tensor& t, ElementFormat to);

// Rank-2 matrix product in Single precision, Single accumulation.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise 1 / (1 + exp(-x)). Saturates, never NaN for finite input.
Tensor sigmoid(const Tensor& x);

// Elementwise max(x, 0).
Tensor relu(const Tensor& x);

}  // namespace optb
