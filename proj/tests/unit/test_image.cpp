#include <cstring>
#include <filesystem>
#include <set>
#include <string>

#include "doctest.h"
#include "i2m/common/error.hpp"
#include "i2m/image/labeled_image.hpp"

using namespace i2m;

namespace {

std::vector<std::uint8_t> header(std::uint32_t nx, std::uint32_t ny, std::uint32_t nz, float sx = 1.0f) {
  std::vector<std::uint8_t> b(32, 0);
  std::memcpy(b.data(), "DMI1", 4);
  const std::uint32_t d[3] = {nx, ny, nz};
  std::memcpy(b.data() + 4, d, 12);
  const float s[3] = {sx, 1.0f, 1.0f};
  std::memcpy(b.data() + 16, s, 12);
  b[28] = 1;
  return b;
}

std::string error_of(std::span<const std::uint8_t> bytes) {
  try {
    load_raw(bytes);
  } catch (const ImageError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("load_raw reads a 2x2x2 image") {
  auto b = header(2, 2, 2);
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(i % 3));
  const auto img = load_raw(b);
  CHECK(img.voxel_count() == 8);
  CHECK(img.at(1, 0, 0) == 1);
  CHECK(img.at(0, 1, 0) == 2);
  CHECK(img.at(1, 1, 1) == 7 % 3);
  CHECK(img.bounds().hi == Point3{2, 2, 2});
}

TEST_CASE("load_raw names the offending field") {
  auto b = header(2, 2, 2);
  b.insert(b.end(), 7, 0);
  CHECK(error_of(b).find("size mismatch") != std::string::npos);

  auto m = header(2, 2, 2);
  m[0] = 'X';
  m.insert(m.end(), 8, 0);
  CHECK(error_of(m).find("'magic'") != std::string::npos);

  auto d = header(2, 0, 2);
  CHECK(error_of(d).find("'dims'") != std::string::npos);

  auto s = header(2, 2, 2, -1.0f);
  s.insert(s.end(), 8, 0);
  CHECK(error_of(s).find("'spacing'") != std::string::npos);

  auto w = header(2, 2, 2);
  w[28] = 2;
  w.insert(w.end(), 16, 0);
  CHECK(error_of(w).find("'label width'") != std::string::npos);

  std::vector<std::uint8_t> short_header(10, 0);
  CHECK(error_of(short_header).find("header") != std::string::npos);
}

TEST_CASE("phantom save/load roundtrip") {
  PhantomSpec spec = parse_phantom_spec("two-spheres:r=3,dims=32x24x20,spacing=0.7");
  const auto img = make_phantom(spec);
  const auto back = load_raw(save_raw(img));
  CHECK(back == img);
  CHECK(back.checksum() == img.checksum());

  const auto path = std::filesystem::temp_directory_path() / "i2m_test_phantom.dmi";
  save_raw_file(img, path);
  CHECK(load_raw_file(path) == img);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_raw_file(path), ImageError);
}

TEST_CASE("sphere phantoms") {
  SUBCASE("r = 0 is all background") {
    const auto img = make_phantom(parse_phantom_spec("sphere:r=0,dims=16"));
    for (auto l : img.labels()) CHECK(l == kBackground);
  }
  SUBCASE("quarter-box sphere voxel count") {
    const auto img = make_phantom(parse_phantom_spec("sphere:r=16,dims=64"));
    std::size_t n = 0;
    for (auto l : img.labels()) n += l == 1;
    // Direct enumeration of voxel centers within r = 16 of (32,32,32).
    CHECK(n == 17256);
    const double ball = 4.0 / 3.0 * M_PI * 16 * 16 * 16;
    CHECK(std::fabs(n - ball) / ball < 0.02);
  }
  SUBCASE("two spheres carry two labels") {
    const auto img = make_phantom(parse_phantom_spec("two-spheres:r=8,dims=64"));
    std::set<Label> seen;
    for (auto l : img.labels()) {
      if (l) seen.insert(l);
    }
    CHECK(seen == std::set<Label>{1, 2});
  }
  SUBCASE("shape outside the grid is rejected") {
    CHECK_THROWS_AS(make_phantom(parse_phantom_spec("sphere:r=40,dims=64")), ImageError);
    CHECK_THROWS_AS(make_phantom(parse_phantom_spec("ellipsoid:a=10,b=40,c=5,dims=64")), ImageError);
  }
  SUBCASE("deterministic") {
    const auto a = make_phantom(parse_phantom_spec("ellipsoid:a=20,b=12,c=8,dims=64x64x48"));
    const auto b = make_phantom(parse_phantom_spec("ellipsoid:a=20,b=12,c=8,dims=64x64x48"));
    CHECK(a == b);
    CHECK(save_raw(a) == save_raw(b));
  }
}

TEST_CASE("phantom spec parsing errors") {
  CHECK_THROWS_AS(parse_phantom_spec("cube:r=3"), UsageError);
  CHECK_THROWS_AS(parse_phantom_spec("sphere:r"), UsageError);
  CHECK_THROWS_AS(parse_phantom_spec("sphere:q=3"), UsageError);
  CHECK_THROWS_AS(parse_phantom_spec("sphere:r=abc"), UsageError);
}

TEST_CASE("classify") {
  // 4x1x1 image with labels 1,2,3,4 along x.
  LabeledImage img({4, 1, 1}, {1.0, 1.0, 1.0}, Point3{}, {1, 2, 3, 4});
  CHECK(classify(img, {0.5, 0.5, 0.5}) == 1);
  CHECK(classify(img, {3.5, 0.5, 0.5}) == 4);
  CHECK(classify(img, {-0.1, 0.5, 0.5}) == kBackground);
  CHECK(classify(img, {4.1, 0.5, 0.5}) == kBackground);
  CHECK(classify(img, {1.0, 0.5, 0.5}) == 1);  // face between voxels 0 and 1
  CHECK(classify(img, {2.0, 0.5, 0.5}) == 2);
  CHECK(classify(img, {4.0, 0.5, 0.5}) == 4);  // outer face stays in the grid
  CHECK(classify(img, {0.0, 0.0, 0.0}) == 1);
}

TEST_CASE("classify is piecewise constant") {
  const auto img = make_phantom(parse_phantom_spec("sphere:r=10,dims=32"));
  for (std::uint32_t k = 0; k < 32; k += 3) {
    for (std::uint32_t j = 0; j < 32; j += 5) {
      for (std::uint32_t i = 0; i < 32; ++i) {
        const Label a = classify(img, {i + 0.1, j + 0.2, k + 0.9});
        const Label b = classify(img, {i + 0.8, j + 0.7, k + 0.3});
        CHECK(a == b);
        CHECK(a == img.at(i, j, k));
      }
    }
  }
}

TEST_CASE("constructor and sizing validation") {
  CHECK_THROWS_AS(LabeledImage({0, 1, 1}, {1, 1, 1}, Point3{}, {}), ImageError);
  CHECK_THROWS_AS(LabeledImage({1, 1, 1}, {0, 1, 1}, Point3{}, {0}), ImageError);
  CHECK_THROWS_AS(LabeledImage({2, 1, 1}, {1, 1, 1}, Point3{}, {0}), ImageError);
  LabeledImage img({2, 2, 2}, {1.0, 2.0, 1.0}, Point3{}, std::vector<Label>(8, 0));
  SizingPolicy s;
  s.h = 0.5;
  CHECK_NOTHROW(s.validate(img));
  s.h = 0.4;
  CHECK_THROWS_AS(s.validate(img), UsageError);
  s.h = 1.0;
  s.per_label[1] = -1.0;
  CHECK_THROWS_AS(s.validate(img), UsageError);
  s.per_label[1] = 0.75;
  CHECK(s.size_for(1) == 0.75);
  CHECK(s.size_for(2) == 1.0);
}

TEST_CASE("phantom defaults build for every kind") {
  for (const char* s : {"sphere:dims=32", "ellipsoid:dims=32", "two-spheres:dims=32"}) {
    CAPTURE(s);
    const auto img = make_phantom(parse_phantom_spec(s));
    CHECK(img.dims()[0] == 32);
  }
}
