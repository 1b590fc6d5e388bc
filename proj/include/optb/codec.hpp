#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "optb/errors.hpp"

namespace optb::codec {

// Positional packing of N same-shaped 8-bit images into one container plane.
//
//   ExactInt*       container[p] = sum_i 256^i * image_i[p], unsigned integer
//                   container. Lossless up to bits/8 images.
//   Float64Faithful the same sum accumulated in binary64. Lossless only while
//                   the sum stays within the 2^53 exact-integer range, i.e.
//                   6 images; up to 16 are accepted but lossy.
//   LosslessOffset* container[p] = sum_i 128^i * (image_i[p] / 2), plus one
//                   parity bit per image per pixel so halving loses nothing.
enum class CodecMode : std::uint8_t {
  ExactInt64 = 0,
  ExactInt128 = 1,
  Float64Faithful = 2,
  LosslessOffset64 = 3,
  LosslessOffset128 = 4,
};

using u128 = unsigned __int128;

// Images a mode can recover exactly.
std::size_t capacity(CodecMode mode);

// Float64Faithful accepts up to this many images, flagged lossy past capacity.
inline constexpr std::size_t kFloat64AcceptLimit = 16;

// ExactInt and LosslessOffset reject anything past capacity.
bool capacity_is_hard(CodecMode mode);

const char* mode_name(CodecMode mode);
bool mode_has_offsets(CodecMode mode);
std::size_t container_value_bytes(CodecMode mode);  // on-disk width per pixel

struct ImageShape {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  bool operator==(const ImageShape&) const = default;
};

// One 8-bit image, pixels row-major (height, width, channel).
struct Image {
  ImageShape shape;
  std::vector<std::uint8_t> pixels;

  bool operator==(const Image&) const = default;
};

// N images packed into one container plane the size of a single image.
// Offsets, when present, are packed 8 per byte, image-major then pixel-major,
// little-endian bit order.
struct EncodedBatch {
  CodecMode mode = CodecMode::ExactInt64;
  ImageShape shape;
  std::uint8_t n_images = 0;
  std::vector<u128> packed;        // integer container modes
  std::vector<double> packed_f64;  // Float64Faithful
  std::vector<std::uint8_t> offsets;

  std::size_t pixel_count() const { return shape.pixel_count(); }
  std::size_t container_byte_size() const {
    return pixel_count() * container_value_bytes(mode);
  }
  std::size_t offsets_byte_size() const { return offsets.size(); }
  std::size_t byte_size() const { return container_byte_size() + offsets_byte_size(); }
  bool lossy() const {
    return mode == CodecMode::Float64Faithful && n_images > capacity(mode);
  }

  bool offset_bit(std::size_t image, std::size_t pixel) const;
};

EncodedBatch encode(std::span<const Image> images, CodecMode mode);
std::vector<Image> decode(const EncodedBatch& enc);

// Max absolute pixel error per image after one encode/decode cycle. Zero for
// every mode within capacity.
std::vector<int> roundtrip_error(std::span<const Image> images, CodecMode mode);

// Bit-exact batch file format:
//   magic "OPTB", version u16=1, mode u8, n_images u8, H/W/C u32,
//   container plane row-major (all integers little-endian, Float64Faithful as
//   binary64 bits), then the packed offset plane for the offset modes.
void write_optb(std::ostream& out, const EncodedBatch& enc);
EncodedBatch read_optb(std::istream& in);
void write_optb_file(const std::filesystem::path& path, const EncodedBatch& enc);
EncodedBatch read_optb_file(const std::filesystem::path& path);

}  // namespace optb::codec
