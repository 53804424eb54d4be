#include "i2m/image/labeled_image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "i2m/common/bytes.hpp"
#include "i2m/common/error.hpp"

namespace i2m {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'I', '1'};

// volatile: GCC 11 at -O3 vectorizes the narrowing away.
double to_float_precision(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

std::uint64_t compute_checksum(const std::array<std::uint32_t, 3>& dims, const std::array<double, 3>& spacing,
                               std::span<const Label> labels) {
  ByteWriter w;
  for (auto d : dims) w.u32(d);
  for (auto s : spacing) w.f64(s);
  std::uint64_t h = fnv1a64(w.buffer());
  return fnv1a64(labels, h);
}

}  // namespace

LabeledImage::LabeledImage(std::array<std::uint32_t, 3> dims, std::array<double, 3> spacing, Point3 origin,
                           std::vector<Label> labels)
    : dims_(dims), spacing_(spacing), origin_(origin), labels_(std::move(labels)) {
  for (int a = 0; a < 3; ++a) {
    if (dims_[a] < 1) throw ImageError("image dims must all be >= 1");
    if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a])) throw ImageError("image spacing must all be > 0");
  }
  if (!is_finite(origin_)) throw ImageError("image origin must be finite");
  const std::size_t expected = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  if (labels_.size() != expected) {
    throw ImageError("label array length " + std::to_string(labels_.size()) + " does not match dims product " +
                     std::to_string(expected));
  }
  checksum_ = compute_checksum(dims_, spacing_, labels_);
}

Box LabeledImage::bounds() const {
  return {origin_, {origin_.x + dims_[0] * spacing_[0], origin_.y + dims_[1] * spacing_[1],
                    origin_.z + dims_[2] * spacing_[2]}};
}

LabeledImage load_raw(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kDmiHeaderSize) {
    throw ImageError("DMI1 header: expected " + std::to_string(kDmiHeaderSize) + " bytes, got " +
                     std::to_string(bytes.size()));
  }
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw ImageError("DMI1 header field 'magic': not a DMI1 file");
  }
  ByteReader r(bytes.subspan(4, kDmiHeaderSize - 4), "DMI1 header");
  std::array<std::uint32_t, 3> dims{};
  for (auto& d : dims) d = r.u32();
  std::array<double, 3> spacing{};
  for (auto& s : spacing) s = r.f32();
  const std::uint8_t width = r.u8();
  for (int a = 0; a < 3; ++a) {
    if (dims[a] == 0) throw ImageError("DMI1 header field 'dims': zero extent on axis " + std::to_string(a));
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
      throw ImageError("DMI1 header field 'spacing': non-positive value on axis " + std::to_string(a));
    }
  }
  if (width != 1) {
    throw ImageError("DMI1 header field 'label width': unsupported width " + std::to_string(width));
  }
  const std::size_t expected = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  const std::size_t payload = bytes.size() - kDmiHeaderSize;
  if (payload != expected) {
    throw ImageError("DMI1 payload size mismatch: dims require " + std::to_string(expected) + " label bytes, got " +
                     std::to_string(payload));
  }
  std::vector<Label> labels(bytes.begin() + kDmiHeaderSize, bytes.end());
  return LabeledImage(dims, spacing, Point3{}, std::move(labels));
}

LabeledImage load_raw_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image file '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_raw(bytes);
}

std::vector<std::uint8_t> save_raw(const LabeledImage& img) {
  ByteWriter w;
  w.reserve(kDmiHeaderSize + img.voxel_count());
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  for (auto d : img.dims()) w.u32(d);
  for (auto s : img.spacing()) w.f32(static_cast<float>(s));
  w.u8(1);
  w.u8(0);
  w.u8(0);
  w.u8(0);
  w.bytes(img.labels());
  return w.take();
}

void save_raw_file(const LabeledImage& img, const std::filesystem::path& path) {
  auto bytes = save_raw(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write image file '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {

std::array<std::uint32_t, 3> parse_dims(const std::string& v) {
  std::array<std::uint32_t, 3> d{};
  std::stringstream ss(v);
  std::string part;
  int n = 0;
  while (std::getline(ss, part, 'x')) {
    if (n == 3) throw UsageError("phantom dims '" + v + "': too many components");
    d[n++] = static_cast<std::uint32_t>(std::stoul(part));
  }
  if (n == 1) d[1] = d[2] = d[0];
  else if (n != 3) throw UsageError("phantom dims '" + v + "': expected N or NxNxN");
  return d;
}

}  // namespace

PhantomSpec parse_phantom_spec(const std::string& text) {
  PhantomSpec spec;
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  if (kind == "sphere") spec.kind = PhantomKind::Sphere;
  else if (kind == "ellipsoid") spec.kind = PhantomKind::Ellipsoid;
  else if (kind == "two-spheres") spec.kind = PhantomKind::TwoSpheres;
  else throw UsageError("unknown phantom kind '" + kind + "' (sphere, ellipsoid, two-spheres)");

  bool have_radius = false;
  if (colon != std::string::npos) {
    std::stringstream ss(text.substr(colon + 1));
    std::string kv;
    while (std::getline(ss, kv, ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("phantom parameter '" + kv + "' is not key=value");
      const std::string key = kv.substr(0, eq);
      const std::string val = kv.substr(eq + 1);
      try {
        if (key == "r") {
          spec.radii = {std::stod(val), std::stod(val), std::stod(val)};
          have_radius = true;
        } else if (key == "a") {
          spec.radii[0] = std::stod(val);
          have_radius = true;
        } else if (key == "b") {
          spec.radii[1] = std::stod(val);
        } else if (key == "c") {
          spec.radii[2] = std::stod(val);
        } else if (key == "dims") {
          spec.dims = parse_dims(val);
        } else if (key == "spacing") {
          const double s = std::stod(val);
          spec.spacing = {s, s, s};
        } else {
          throw UsageError("unknown phantom parameter '" + key + "'");
        }
      } catch (const std::logic_error&) {
        throw UsageError("phantom parameter '" + kv + "' has a malformed value");
      }
    }
  }
  if (!have_radius) {
    const double r = 0.25 * std::min({spec.dims[0] * spec.spacing[0], spec.dims[1] * spec.spacing[1],
                                      spec.dims[2] * spec.spacing[2]});
    if (spec.kind == PhantomKind::Ellipsoid) spec.radii = {r, 0.75 * r, 0.5 * r};
    else if (spec.kind == PhantomKind::TwoSpheres) spec.radii = {0.6 * r, 0.6 * r, 0.6 * r};
    else spec.radii = {r, r, r};
  }
  return spec;
}

LabeledImage make_phantom(const PhantomSpec& spec) {
  std::array<double, 3> spacing{};
  for (int a = 0; a < 3; ++a) spacing[a] = to_float_precision(spec.spacing[a]);
  const std::array<double, 3> ext{spec.dims[0] * spacing[0], spec.dims[1] * spacing[1], spec.dims[2] * spacing[2]};

  struct Blob {
    Point3 center;
    std::array<double, 3> radii;
    Label label;
  };
  std::vector<Blob> blobs;
  const Point3 mid{0.5 * ext[0], 0.5 * ext[1], 0.5 * ext[2]};
  switch (spec.kind) {
    case PhantomKind::Sphere:
      blobs.push_back({mid, {spec.radii[0], spec.radii[0], spec.radii[0]}, 1});
      break;
    case PhantomKind::Ellipsoid:
      blobs.push_back({mid, spec.radii, 1});
      break;
    case PhantomKind::TwoSpheres: {
      const double r = spec.radii[0];
      blobs.push_back({{0.3 * ext[0], mid.y, mid.z}, {r, r, r}, 1});
      blobs.push_back({{0.7 * ext[0], mid.y, mid.z}, {r, r, r}, 2});
      if (2.0 * r >= 0.4 * ext[0]) throw ImageError("two-spheres phantom: spheres overlap (r too large)");
      break;
    }
  }
  for (const auto& b : blobs) {
    const double c[3] = {b.center.x, b.center.y, b.center.z};
    for (int a = 0; a < 3; ++a) {
      if (b.radii[a] < 0.0) throw ImageError("phantom radius must be >= 0");
      if (c[a] - b.radii[a] < 0.0 || c[a] + b.radii[a] > ext[a]) {
        throw ImageError("phantom shape exceeds the grid bounds on axis " + std::to_string(a));
      }
    }
  }

  const auto [nx, ny, nz] = spec.dims;
  std::vector<Label> labels(static_cast<std::size_t>(nx) * ny * nz, kBackground);
  for (std::uint32_t k = 0; k < nz; ++k) {
    const double z = (k + 0.5) * spacing[2];
    for (std::uint32_t j = 0; j < ny; ++j) {
      const double y = (j + 0.5) * spacing[1];
      for (std::uint32_t i = 0; i < nx; ++i) {
        const double x = (i + 0.5) * spacing[0];
        for (const auto& b : blobs) {
          if (b.radii[0] <= 0.0 || b.radii[1] <= 0.0 || b.radii[2] <= 0.0) continue;
          const double dx = (x - b.center.x) / b.radii[0];
          const double dy = (y - b.center.y) / b.radii[1];
          const double dz = (z - b.center.z) / b.radii[2];
          if (dx * dx + dy * dy + dz * dz <= 1.0) {
            labels[(static_cast<std::size_t>(k) * ny + j) * nx + i] = b.label;
            break;
          }
        }
      }
    }
  }
  return LabeledImage(spec.dims, spacing, Point3{}, std::move(labels));
}

namespace {

// Voxel index along one axis with the lower-index tie-break; -1 if outside.
inline long voxel_index(double coord, double origin, double spacing, std::uint32_t n) {
  const double t = (coord - origin) / spacing;
  if (!(t >= 0.0) || t > static_cast<double>(n)) return -1;
  if (t == 0.0) return 0;
  return static_cast<long>(std::ceil(t)) - 1;
}

}  // namespace

Label classify(const LabeledImage& img, const Point3& p) {
  const auto& d = img.dims();
  const auto& s = img.spacing();
  const auto& o = img.origin();
  const long i = voxel_index(p.x, o.x, s[0], d[0]);
  const long j = voxel_index(p.y, o.y, s[1], d[1]);
  const long k = voxel_index(p.z, o.z, s[2], d[2]);
  if (i < 0 || j < 0 || k < 0) return kBackground;
  return img.at(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(k));
}

void SizingPolicy::validate(const LabeledImage& img) const {
  const double min_spacing = std::min({img.spacing()[0], img.spacing()[1], img.spacing()[2]});
  auto check = [&](double v, const std::string& what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw UsageError(what + " must be > 0");
    if (v < 0.5 * min_spacing) {
      throw UsageError(what + " = " + std::to_string(v) + " is finer than half a voxel (" +
                       std::to_string(0.5 * min_spacing) + ")");
    }
  };
  check(h, "sizing h");
  for (const auto& [label, v] : per_label) check(v, "sizing h for label " + std::to_string(label));
}

}  // namespace i2m
