#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "optb/dataset.hpp"

using namespace optb;
using namespace optb::data;

TEST_SUITE_BEGIN("data");

TEST_CASE("blob datasets are deterministic and class-structured") {
  const codec::ImageShape shape{4, 4, 1};
  const Dataset a = make_blobs(40, 4, shape, 80.0, 10.0, 5);
  const Dataset b = make_blobs(40, 4, shape, 80.0, 10.0, 5);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  CHECK(a.size() == 40);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.labels[i] == static_cast<int>(i % 4));

  // examples of the same class cluster tighter than examples across classes
  auto dist = [&](std::size_t x, std::size_t y) {
    double d = 0.0;
    const auto px = a.pixels_of(x);
    const auto py = a.pixels_of(y);
    for (std::size_t j = 0; j < px.size(); ++j) {
      const double diff = static_cast<double>(px[j]) - static_cast<double>(py[j]);
      d += diff * diff;
    }
    return d;
  };
  CHECK(dist(0, 4) < dist(0, 1));  // 0 and 4 share a class, 0 and 1 do not

  const Dataset c = make_blobs(40, 4, shape, 80.0, 10.0, 6);
  CHECK(a.pixels != c.pixels);
}

TEST_CASE("batch_tensor scales pixels into floats") {
  const Dataset ds = make_blobs(8, 2, codec::ImageShape{2, 2, 1}, 60.0, 5.0, 1);
  const std::vector<std::size_t> idx = {3, 0};
  const Tensor t = ds.batch_tensor(idx, 1.0f / 255.0f);
  REQUIRE(t.shape() == Shape{2, 4});
  for (std::size_t r = 0; r < 2; ++r) {
    const auto px = ds.pixels_of(idx[r]);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(t.values()[r * 4 + j] == static_cast<float>(px[j]) * (1.0f / 255.0f));
    }
  }
}

TEST_CASE("record files parse the label byte and transpose planar pixels") {
  const auto path = std::filesystem::temp_directory_path() /
                    ("optb_records_" +
                     std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  {
    std::ofstream out(path, std::ios::binary);
    // record 0: label 1, channel plane 0 = {10,11}, plane 1 = {20,21}
    const unsigned char rec0[] = {1, 10, 11, 20, 21};
    // record 1: label 0
    const unsigned char rec1[] = {0, 1, 2, 3, 4};
    out.write(reinterpret_cast<const char*>(rec0), 5);
    out.write(reinterpret_cast<const char*>(rec1), 5);
  }
  const codec::ImageShape shape{1, 2, 2};  // H=1, W=2, C=2
  const Dataset ds = load_records(path, shape, 2);
  REQUIRE(ds.size() == 2);
  CHECK(ds.labels == std::vector<int>{1, 0});
  // interleaved H,W,C: pixel(0,0) channels {10,20}, pixel(0,1) channels {11,21}
  CHECK(ds.pixels_of(0)[0] == 10);
  CHECK(ds.pixels_of(0)[1] == 20);
  CHECK(ds.pixels_of(0)[2] == 11);
  CHECK(ds.pixels_of(0)[3] == 21);

  SUBCASE("trailing partial records are rejected") {
    {
      std::ofstream out(path, std::ios::binary | std::ios::app);
      const unsigned char garbage[] = {7, 7};
      out.write(reinterpret_cast<const char*>(garbage), 2);
    }
    CHECK_THROWS_AS(load_records(path, shape, 2), FormatError);
  }
  SUBCASE("labels outside the class range are rejected") {
    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      const unsigned char rec[] = {9, 1, 2, 3, 4};
      out.write(reinterpret_cast<const char*>(rec), 5);
    }
    CHECK_THROWS_AS(load_records(path, shape, 2), FormatError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("missing or empty record files are errors") {
  CHECK_THROWS_AS(load_records("/nonexistent/records.bin", codec::ImageShape{1, 1, 1}, 2),
                  FormatError);
}

TEST_SUITE_END();
