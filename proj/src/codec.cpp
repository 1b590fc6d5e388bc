#include "optb/codec.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace optb::codec {

std::size_t capacity(CodecMode mode) {
  switch (mode) {
    case CodecMode::ExactInt64:
      return 64 / 8;
    case CodecMode::ExactInt128:
      return 128 / 8;
    case CodecMode::Float64Faithful:
      return 6;  // largest N with 256^N - 1 <= 2^53
    case CodecMode::LosslessOffset64:
      return 64 / 7;
    case CodecMode::LosslessOffset128:
      return 128 / 7;
  }
  throw Error("unknown codec mode");
}

bool capacity_is_hard(CodecMode mode) { return mode != CodecMode::Float64Faithful; }

const char* mode_name(CodecMode mode) {
  switch (mode) {
    case CodecMode::ExactInt64:
      return "exact64";
    case CodecMode::ExactInt128:
      return "exact128";
    case CodecMode::Float64Faithful:
      return "f64";
    case CodecMode::LosslessOffset64:
      return "lossless64";
    case CodecMode::LosslessOffset128:
      return "lossless128";
  }
  return "?";
}

bool mode_has_offsets(CodecMode mode) {
  return mode == CodecMode::LosslessOffset64 || mode == CodecMode::LosslessOffset128;
}

std::size_t container_value_bytes(CodecMode mode) {
  switch (mode) {
    case CodecMode::ExactInt64:
    case CodecMode::Float64Faithful:
    case CodecMode::LosslessOffset64:
      return 8;
    case CodecMode::ExactInt128:
    case CodecMode::LosslessOffset128:
      return 16;
  }
  return 0;
}

namespace {

// Bits a container value may occupy for n packed images; 0 means unbounded
// within the container (full capacity uses every bit).
unsigned value_bit_limit(CodecMode mode, std::size_t n) {
  const unsigned per_image = mode_has_offsets(mode) ? 7u : 8u;
  const unsigned used = per_image * static_cast<unsigned>(n);
  const unsigned total = container_value_bytes(mode) * 8;
  return used >= total ? 0 : used;
}

std::size_t offsets_plane_bytes(std::size_t n_images, std::size_t pixels) {
  return (n_images * pixels + 7) / 8;
}

void validate_batch_input(std::span<const Image> images, CodecMode mode) {
  if (images.empty()) throw Error("encode: batch must contain at least one image");
  const ImageShape shape = images[0].shape;
  if (shape.pixel_count() == 0) throw ShapeError("encode: image extents must be positive");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i].shape == shape)) {
      throw ShapeError("encode: image " + std::to_string(i) + " shape differs from image 0");
    }
    if (images[i].pixels.size() != shape.pixel_count()) {
      throw ShapeError("encode: image " + std::to_string(i) + " pixel buffer does not match shape");
    }
  }
  const std::size_t cap = capacity(mode);
  const std::size_t limit = capacity_is_hard(mode) ? cap : kFloat64AcceptLimit;
  if (images.size() > limit) {
    throw CapacityError("encode: " + std::to_string(images.size()) + " images exceed " +
                        mode_name(mode) + " capacity of " + std::to_string(limit));
  }
}

}  // namespace

bool EncodedBatch::offset_bit(std::size_t image, std::size_t pixel) const {
  const std::size_t bit = image * pixel_count() + pixel;
  return (offsets[bit / 8] >> (bit % 8)) & 1u;
}

EncodedBatch encode(std::span<const Image> images, CodecMode mode) {
  validate_batch_input(images, mode);
  EncodedBatch enc;
  enc.mode = mode;
  enc.shape = images[0].shape;
  enc.n_images = static_cast<std::uint8_t>(images.size());
  const std::size_t pixels = enc.pixel_count();

  if (mode == CodecMode::Float64Faithful) {
    enc.packed_f64.assign(pixels, 0.0);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const double scale = std::ldexp(1.0, static_cast<int>(8 * i));  // 256^i
      const std::uint8_t* px = images[i].pixels.data();
      for (std::size_t p = 0; p < pixels; ++p) enc.packed_f64[p] += px[p] * scale;
    }
    return enc;
  }

  enc.packed.assign(pixels, 0);
  if (mode_has_offsets(mode)) {
    enc.offsets.assign(offsets_plane_bytes(images.size(), pixels), 0);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const unsigned shift = static_cast<unsigned>(7 * i);  // 128^i
      const std::uint8_t* px = images[i].pixels.data();
      for (std::size_t p = 0; p < pixels; ++p) {
        enc.packed[p] += static_cast<u128>(px[p] >> 1) << shift;
        const std::size_t bit = i * pixels + p;
        enc.offsets[bit / 8] |= static_cast<std::uint8_t>((px[p] & 1u) << (bit % 8));
      }
    }
  } else {
    for (std::size_t i = 0; i < images.size(); ++i) {
      const unsigned shift = static_cast<unsigned>(8 * i);  // 256^i
      const std::uint8_t* px = images[i].pixels.data();
      for (std::size_t p = 0; p < pixels; ++p) {
        enc.packed[p] += static_cast<u128>(px[p]) << shift;
      }
    }
  }
  return enc;
}

std::vector<Image> decode(const EncodedBatch& enc) {
  const std::size_t pixels = enc.pixel_count();
  const std::size_t n = enc.n_images;
  if (n == 0 || pixels == 0) throw FormatError("decode: empty encoded batch");

  std::vector<Image> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].shape = enc.shape;
    out[i].pixels.assign(pixels, 0);
  }

  if (enc.mode == CodecMode::Float64Faithful) {
    if (enc.packed_f64.size() != pixels) throw FormatError("decode: container plane size mismatch");
    // Past capacity the sum itself is rounded, so a range breach is expected
    // lossiness rather than corruption.
    const bool check_range = n <= capacity(enc.mode);
    const double limit = std::ldexp(1.0, static_cast<int>(8 * n));  // 256^n
    for (std::size_t p = 0; p < pixels; ++p) {
      double acc = enc.packed_f64[p];
      if (!(acc >= 0.0) || (check_range && acc >= limit)) {
        throw FormatError("decode: container value out of range for " + std::to_string(n) +
                          " images");
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double q = std::fmod(acc, 256.0);
        acc = (acc - q) * 0x1.0p-8;  // exact: quotient of integers by 2^8
        out[i].pixels[p] = static_cast<std::uint8_t>(q);
      }
    }
    return out;
  }

  if (enc.packed.size() != pixels) throw FormatError("decode: container plane size mismatch");
  const bool offsets = mode_has_offsets(enc.mode);
  if (offsets && enc.offsets.size() != offsets_plane_bytes(n, pixels)) {
    throw FormatError("decode: offset plane size mismatch");
  }
  const unsigned bit_limit = value_bit_limit(enc.mode, n);
  const unsigned per_image_bits = offsets ? 7u : 8u;
  const u128 mask = (u128{1} << per_image_bits) - 1;

  for (std::size_t p = 0; p < pixels; ++p) {
    u128 acc = enc.packed[p];
    if (bit_limit != 0 && (acc >> bit_limit) != 0) {
      throw FormatError("decode: container value exceeds range of " + std::to_string(n) +
                        " packed images");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto q = static_cast<std::uint8_t>(acc & mask);
      acc >>= per_image_bits;
      if (offsets) {
        const std::size_t bit = i * pixels + p;
        const std::uint8_t parity = (enc.offsets[bit / 8] >> (bit % 8)) & 1u;
        out[i].pixels[p] = static_cast<std::uint8_t>((q << 1) | parity);
      } else {
        out[i].pixels[p] = q;
      }
    }
  }
  return out;
}

std::vector<int> roundtrip_error(std::span<const Image> images, CodecMode mode) {
  const std::vector<Image> back = decode(encode(images, mode));
  std::vector<int> errs(images.size(), 0);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::size_t pixels = images[i].pixels.size();
    int worst = 0;
    for (std::size_t p = 0; p < pixels; ++p) {
      const int d = std::abs(static_cast<int>(images[i].pixels[p]) -
                             static_cast<int>(back[i].pixels[p]));
      if (d > worst) worst = d;
    }
    errs[i] = worst;
  }
  return errs;
}

namespace {

constexpr char kMagic[4] = {'O', 'P', 'T', 'B'};
constexpr std::uint16_t kVersion = 1;

void put_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void put_u16(std::ostream& out, std::uint16_t v) {
  const std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
  put_bytes(out, b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  std::uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  put_bytes(out, b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  put_bytes(out, b, 8);
}

void get_bytes(std::istream& in, void* data, std::size_t n) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError("optb: truncated stream");
  }
}

std::uint16_t get_u16(std::istream& in) {
  std::uint8_t b[2];
  get_bytes(in, b, 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
  std::uint8_t b[4];
  get_bytes(in, b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  std::uint8_t b[8];
  get_bytes(in, b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_optb(std::ostream& out, const EncodedBatch& enc) {
  if (enc.n_images == 0) throw Error("optb: refusing to write an empty batch");
  put_bytes(out, kMagic, 4);
  put_u16(out, kVersion);
  const std::uint8_t tag = static_cast<std::uint8_t>(enc.mode);
  put_bytes(out, &tag, 1);
  put_bytes(out, &enc.n_images, 1);
  put_u32(out, enc.shape.height);
  put_u32(out, enc.shape.width);
  put_u32(out, enc.shape.channels);

  const std::size_t pixels = enc.pixel_count();
  if (enc.mode == CodecMode::Float64Faithful) {
    for (std::size_t p = 0; p < pixels; ++p) {
      put_u64(out, std::bit_cast<std::uint64_t>(enc.packed_f64[p]));
    }
  } else if (container_value_bytes(enc.mode) == 8) {
    for (std::size_t p = 0; p < pixels; ++p) {
      put_u64(out, static_cast<std::uint64_t>(enc.packed[p]));
    }
  } else {
    for (std::size_t p = 0; p < pixels; ++p) {
      put_u64(out, static_cast<std::uint64_t>(enc.packed[p]));
      put_u64(out, static_cast<std::uint64_t>(enc.packed[p] >> 64));
    }
  }
  if (mode_has_offsets(enc.mode)) {
    put_bytes(out, enc.offsets.data(), enc.offsets.size());
  }
  if (!out) throw FormatError("optb: stream write failed");
}

EncodedBatch read_optb(std::istream& in) {
  char magic[4];
  get_bytes(in, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("optb: bad magic");
  const std::uint16_t version = get_u16(in);
  if (version != kVersion) {
    throw FormatError("optb: unsupported version " + std::to_string(version));
  }
  std::uint8_t tag = 0;
  std::uint8_t n_images = 0;
  get_bytes(in, &tag, 1);
  get_bytes(in, &n_images, 1);
  if (tag > static_cast<std::uint8_t>(CodecMode::LosslessOffset128)) {
    throw FormatError("optb: unknown mode tag " + std::to_string(tag));
  }
  EncodedBatch enc;
  enc.mode = static_cast<CodecMode>(tag);
  enc.n_images = n_images;
  enc.shape.height = get_u32(in);
  enc.shape.width = get_u32(in);
  enc.shape.channels = get_u32(in);

  const std::size_t pixels = enc.pixel_count();
  if (n_images == 0 || pixels == 0) throw FormatError("optb: empty batch header");
  const std::size_t limit =
      capacity_is_hard(enc.mode) ? capacity(enc.mode) : kFloat64AcceptLimit;
  if (n_images > limit) {
    throw FormatError("optb: image count " + std::to_string(n_images) + " exceeds " +
                      mode_name(enc.mode) + " capacity");
  }

  if (enc.mode == CodecMode::Float64Faithful) {
    enc.packed_f64.resize(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      enc.packed_f64[p] = std::bit_cast<double>(get_u64(in));
    }
  } else if (container_value_bytes(enc.mode) == 8) {
    enc.packed.resize(pixels);
    for (std::size_t p = 0; p < pixels; ++p) enc.packed[p] = get_u64(in);
  } else {
    enc.packed.resize(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      const std::uint64_t lo = get_u64(in);
      const std::uint64_t hi = get_u64(in);
      enc.packed[p] = (static_cast<u128>(hi) << 64) | lo;
    }
  }
  if (mode_has_offsets(enc.mode)) {
    enc.offsets.resize((static_cast<std::size_t>(n_images) * pixels + 7) / 8);
    get_bytes(in, enc.offsets.data(), enc.offsets.size());
  }
  return enc;
}

void write_optb_file(const std::filesystem::path& path, const EncodedBatch& enc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("optb: cannot open for writing: " + path.string());
  write_optb(out, enc);
  out.flush();
  if (!out) throw FormatError("optb: write failed: " + path.string());
}

EncodedBatch read_optb_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("optb: cannot open: " + path.string());
  return read_optb(in);
}

}  // namespace optb::codec
