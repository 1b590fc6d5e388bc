#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "optb/codec.hpp"
#include "optb/tensor.hpp"

namespace optb::data {

// Labeled 8-bit images, stored contiguously (row-major H, W, C per example).
struct Dataset {
  codec::ImageShape shape;
  std::size_t num_classes = 0;
  std::vector<std::uint8_t> pixels;  // size() * shape.pixel_count()
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const std::uint8_t> pixels_of(std::size_t example) const;
  codec::Image image_of(std::size_t example) const;

  // Rows = examples in the given order, features = pixels scaled by `scale`.
  // This is the exact float view a decode layer with the same scale emits.
  Tensor batch_tensor(std::span<const std::size_t> examples, float scale) const;
};

// Gaussian class blobs quantized to 8-bit pixels: each class gets a random
// center and examples scatter around it. Easy to separate, cheap to make,
// and encodable because it is genuinely 8-bit data.
Dataset make_blobs(std::size_t examples, std::size_t num_classes, codec::ImageShape shape,
                   double center_spread, double noise_sigma, std::uint64_t seed);

// Classic binary record layout: 1 label byte then channels*height*width pixel
// bytes per record, planar channel order. Pixels are transposed to the
// interleaved row-major layout used everywhere else.
Dataset load_records(const std::filesystem::path& path, codec::ImageShape shape,
                     std::size_t num_classes);

}  // namespace optb::data
