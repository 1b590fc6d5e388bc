#include "optb/tensor.hpp"

#include <bit>
#include <cmath>

namespace optb {

const char* format_name(ElementFormat f) {
  return f == ElementFormat::Single ? "single" : "half";
}

std::uint16_t float_to_half(float value) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  const auto sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
  const std::uint32_t exp8 = (bits >> 23) & 0xffu;
  const std::uint32_t frac = bits & 0x7fffffu;

  if (exp8 == 0xffu) {  // inf or nan
    return frac ? static_cast<std::uint16_t>(sign | 0x7e00u)
                : static_cast<std::uint16_t>(sign | 0x7c00u);
  }
  if (exp8 == 0) return sign;  // float subnormals are below half the Half ulp

  const int unbiased = static_cast<int>(exp8) - 127;
  if (unbiased >= 16) return static_cast<std::uint16_t>(sign | 0x7c00u);

  const std::uint32_t sig = frac | 0x800000u;  // 24-bit significand

  if (unbiased >= -14) {
    // Normal target: keep 11 significand bits, round the dropped 13 to
    // nearest even.
    std::uint32_t rounded = (sig + 0xfffu + ((sig >> 13) & 1u)) >> 13;
    int he = unbiased + 15;
    if (rounded & 0x800u) {  // significand carried into 2.0
      rounded >>= 1;
      ++he;
    }
    if (he >= 31) return static_cast<std::uint16_t>(sign | 0x7c00u);
    return static_cast<std::uint16_t>(sign | static_cast<std::uint32_t>(he << 10) |
                                      (rounded & 0x3ffu));
  }

  // Subnormal target: result counts units of 2^-24.
  const int shift = -unbiased - 1;  // >= 14
  if (shift >= 25) return sign;
  const std::uint64_t halfway = std::uint64_t{1} << (shift - 1);
  const std::uint64_t rounded =
      (std::uint64_t{sig} + halfway - 1 + ((sig >> shift) & 1u)) >> shift;
  // rounded == 0x400 lands exactly on the smallest normal encoding.
  return static_cast<std::uint16_t>(sign | rounded);
}

float half_to_float(std::uint16_t bits) {
  const std::uint32_t sign = (static_cast<std::uint32_t>(bits) & 0x8000u) << 16;
  const std::uint32_t exp5 = (bits >> 10) & 0x1fu;
  std::uint32_t frac = bits & 0x3ffu;

  if (exp5 == 0x1fu) {  // inf or nan
    return std::bit_cast<float>(sign | 0x7f800000u | (frac << 13));
  }
  if (exp5 == 0) {
    if (frac == 0) return std::bit_cast<float>(sign);
    // Subnormal: normalize into a binary32 exponent.
    int e = 127 - 15 + 1;
    while (!(frac & 0x400u)) {
      frac <<= 1;
      --e;
    }
    frac &= 0x3ffu;
    return std::bit_cast<float>(sign | (static_cast<std::uint32_t>(e) << 23) | (frac << 13));
  }
  return std::bit_cast<float>(sign | ((exp5 + 127 - 15) << 23) | (frac << 13));
}

std::size_t shape_element_count(const Shape& shape) {
  std::size_t n = 1;
  for (const std::size_t e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

std::string shape_to_string(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out.empty() ? "<empty>" : out;
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (const std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, ElementFormat format) {
  validate_shape(shape);
  Tensor t;
  t.shape_ = std::move(shape);
  t.format_ = format;
  const std::size_t n = shape_element_count(t.shape_);
  if (format == ElementFormat::Single) {
    t.single_.assign(n, 0.0f);
  } else {
    t.half_.assign(n, 0);
  }
  return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const float> values) {
  validate_shape(shape);
  if (shape_element_count(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not fill shape " + shape_to_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.format_ = ElementFormat::Single;
  t.single_.assign(values.begin(), values.end());
  return t;
}

Tensor Tensor::scalar_like(float value) {
  return from_values({1, 1}, std::span<const float>(&value, 1));
}

std::size_t Tensor::element_count() const { return shape_element_count(shape_); }

std::span<float> Tensor::values() {
  if (format_ != ElementFormat::Single) throw Error("tensor is not in single format");
  return single_;
}

std::span<const float> Tensor::values() const {
  if (format_ != ElementFormat::Single) throw Error("tensor is not in single format");
  return single_;
}

std::span<std::uint16_t> Tensor::half_bits() {
  if (format_ != ElementFormat::Half) throw Error("tensor is not in half format");
  return half_;
}

std::span<const std::uint16_t> Tensor::half_bits() const {
  if (format_ != ElementFormat::Half) throw Error("tensor is not in half format");
  return half_;
}

float Tensor::value_at(std::size_t flat_index) const {
  return format_ == ElementFormat::Single ? single_.at(flat_index)
                                          : half_to_float(half_.at(flat_index));
}

Tensor convert(const Tensor& t, ElementFormat to) {
  if (t.empty()) throw Error("convert: empty tensor");
  Tensor out = Tensor::zeros(t.shape(), to);
  const std::size_t n = t.element_count();
  if (to == t.format()) {
    if (to == ElementFormat::Single) {
      std::span<float> dst = out.values();
      std::span<const float> src = t.values();
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i];
    } else {
      std::span<std::uint16_t> dst = out.half_bits();
      std::span<const std::uint16_t> src = t.half_bits();
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i];
    }
  } else if (to == ElementFormat::Half) {
    std::span<std::uint16_t> dst = out.half_bits();
    std::span<const float> src = t.values();
    for (std::size_t i = 0; i < n; ++i) dst[i] = float_to_half(src[i]);
  } else {
    std::span<float> dst = out.values();
    std::span<const std::uint16_t> src = t.half_bits();
    for (std::size_t i = 0; i < n; ++i) dst[i] = half_to_float(src[i]);
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expects rank-2 operands, got " + shape_to_string(a.shape()) +
                     " and " + shape_to_string(b.shape()));
  }
  if (a.format() != ElementFormat::Single || b.format() != ElementFormat::Single) {
    throw Error("matmul: operands must be in single format");
  }
  const std::size_t m = a.extent(0);
  const std::size_t k = a.extent(1);
  const std::size_t n = b.extent(1);
  if (b.extent(0) != k) {
    throw ShapeError("matmul: inner extents differ: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  Tensor c = Tensor::zeros({m, n});
  std::span<const float> av = a.values();
  std::span<const float> bv = b.values();
  std::span<float> cv = c.values();
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = cv.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = av[i * k + p];
      const float* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Tensor sigmoid(const Tensor& x) {
  const Tensor xs = x.format() == ElementFormat::Single ? x : convert(x, ElementFormat::Single);
  Tensor out = Tensor::zeros(x.shape());
  std::span<const float> src = xs.values();
  std::span<float> dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = 1.0f / (1.0f + std::exp(-src[i]));
  }
  return out;
}

Tensor relu(const Tensor& x) {
  const Tensor xs = x.format() == ElementFormat::Single ? x : convert(x, ElementFormat::Single);
  Tensor out = Tensor::zeros(x.shape());
  std::span<const float> src = xs.values();
  std::span<float> dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
  }
  return out;
}

}  // namespace optb
