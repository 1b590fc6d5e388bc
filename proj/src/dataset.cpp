#include "optb/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "optb/rng.hpp"

namespace optb::data {

std::span<const std::uint8_t> Dataset::pixels_of(std::size_t example) const {
  const std::size_t p = shape.pixel_count();
  return std::span<const std::uint8_t>(pixels.data() + example * p, p);
}

codec::Image Dataset::image_of(std::size_t example) const {
  codec::Image img;
  img.shape = shape;
  const auto view = pixels_of(example);
  img.pixels.assign(view.begin(), view.end());
  return img;
}

Tensor Dataset::batch_tensor(std::span<const std::size_t> examples, float scale) const {
  const std::size_t p = shape.pixel_count();
  Tensor t = Tensor::zeros({examples.size(), p});
  std::span<float> tv = t.values();
  for (std::size_t r = 0; r < examples.size(); ++r) {
    const auto view = pixels_of(examples[r]);
    float* row = tv.data() + r * p;
    for (std::size_t i = 0; i < p; ++i) row[i] = static_cast<float>(view[i]) * scale;
  }
  return t;
}

Dataset make_blobs(std::size_t examples, std::size_t num_classes, codec::ImageShape shape,
                   double center_spread, double noise_sigma, std::uint64_t seed) {
  if (examples == 0 || num_classes == 0) throw Error("blobs: empty dataset requested");
  const std::size_t p = shape.pixel_count();
  if (p == 0) throw ShapeError("blobs: image extents must be positive");

  Rng rng(seed);
  std::vector<double> centers(num_classes * p);
  const double mid = 127.5;
  for (double& c : centers) c = mid + center_spread * (rng.next_double() * 2.0 - 1.0);

  Dataset ds;
  ds.shape = shape;
  ds.num_classes = num_classes;
  ds.pixels.resize(examples * p);
  ds.labels.resize(examples);
  for (std::size_t i = 0; i < examples; ++i) {
    const auto cls = static_cast<int>(i % num_classes);
    ds.labels[i] = cls;
    const double* center = centers.data() + static_cast<std::size_t>(cls) * p;
    std::uint8_t* px = ds.pixels.data() + i * p;
    for (std::size_t j = 0; j < p; ++j) {
      const double v = std::round(center[j] + noise_sigma * rng.next_gaussian());
      px[j] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return ds;
}

Dataset load_records(const std::filesystem::path& path, codec::ImageShape shape,
                     std::size_t num_classes) {
  const std::size_t p = shape.pixel_count();
  if (p == 0) throw ShapeError("records: image extents must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("records: cannot open " + path.string());

  Dataset ds;
  ds.shape = shape;
  ds.num_classes = num_classes;
  std::vector<char> record(1 + p);
  const std::size_t plane = static_cast<std::size_t>(shape.height) * shape.width;
  while (in.read(record.data(), static_cast<std::streamsize>(record.size()))) {
    const int label = static_cast<std::uint8_t>(record[0]);
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw FormatError("records: label " + std::to_string(label) + " outside " +
                        std::to_string(num_classes) + " classes in " + path.string());
    }
    ds.labels.push_back(label);
    const std::size_t base = ds.pixels.size();
    ds.pixels.resize(base + p);
    // planar C,H,W -> interleaved H,W,C
    for (std::size_t c = 0; c < shape.channels; ++c) {
      for (std::size_t hw = 0; hw < plane; ++hw) {
        ds.pixels[base + hw * shape.channels + c] =
            static_cast<std::uint8_t>(record[1 + c * plane + hw]);
      }
    }
  }
  if (in.gcount() != 0) {
    throw FormatError("records: trailing partial record in " + path.string());
  }
  if (ds.labels.empty()) throw FormatError("records: no records in " + path.string());
  return ds;
}

}  // namespace optb::data
