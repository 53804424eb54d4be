#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "i2m/geom/point.hpp"

namespace i2m {

using Label = std::uint8_t;
inline constexpr Label kBackground = 0;

/// 3D voxel grid of material labels. Immutable once constructed; shared
/// read-only across threads.
class LabeledImage {
 public:
  /// Throws ImageError if any dim is 0, any spacing is not > 0, or the label
  /// count differs from nx*ny*nz.
  LabeledImage(std::array<std::uint32_t, 3> dims, std::array<double, 3> spacing, Point3 origin,
               std::vector<Label> labels);

  const std::array<std::uint32_t, 3>& dims() const { return dims_; }
  const std::array<double, 3>& spacing() const { return spacing_; }
  const Point3& origin() const { return origin_; }
  std::span<const Label> labels() const { return labels_; }
  std::size_t voxel_count() const { return labels_.size(); }

  Label at(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
    return labels_[(static_cast<std::size_t>(k) * dims_[1] + j) * dims_[0] + i];
  }

  /// origin .. origin + dims*spacing.
  Box bounds() const;

  /// FNV-1a over the header fields and label payload.
  std::uint64_t checksum() const { return checksum_; }

  friend bool operator==(const LabeledImage& a, const LabeledImage& b) {
    return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.origin_ == b.origin_ && a.labels_ == b.labels_;
  }

 private:
  std::array<std::uint32_t, 3> dims_;
  std::array<double, 3> spacing_;
  Point3 origin_;
  std::vector<Label> labels_;
  std::uint64_t checksum_ = 0;
};

// DMI1 raw format: 32-byte header ("DMI1", 3 x u32 dims, 3 x f32 spacing,
// u8 label width = 1, 3 reserved zero bytes), then labels x-fastest.
// Spacing travels as f32, so images normalize spacing to float precision.
inline constexpr std::size_t kDmiHeaderSize = 32;

LabeledImage load_raw(std::span<const std::uint8_t> bytes);
LabeledImage load_raw_file(const std::filesystem::path& path);
std::vector<std::uint8_t> save_raw(const LabeledImage& img);
void save_raw_file(const LabeledImage& img, const std::filesystem::path& path);

enum class PhantomKind { Sphere, Ellipsoid, TwoSpheres };

struct PhantomSpec {
  PhantomKind kind = PhantomKind::Sphere;
  std::array<std::uint32_t, 3> dims{64, 64, 64};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  /// Sphere: radii[0] = r. Ellipsoid: semi-axes. TwoSpheres: both radii[0].
  std::array<double, 3> radii{16.0, 16.0, 16.0};
};

/// Parses "sphere:r=16,dims=64", "ellipsoid:a=20,b=12,c=8,dims=64x64x48",
/// "two-spheres:r=10,dims=64,spacing=0.5". Throws UsageError.
PhantomSpec parse_phantom_spec(const std::string& text);

/// Voxels whose centers lie in the shape get label 1 (second sphere: 2).
/// Shapes are centered in the grid; two-spheres sit at 30% and 70% along x.
/// Throws ImageError if the shape leaves the grid.
LabeledImage make_phantom(const PhantomSpec& spec);

/// Label of the voxel containing p; kBackground outside the grid. Points on
/// a voxel face belong to the lower-index voxel along the tied axis.
Label classify(const LabeledImage& img, const Point3& p);

/// Target circumradius bound h (mm), uniform with optional per-label overrides.
struct SizingPolicy {
  double h = 1.0;
  std::map<Label, double> per_label;

  double size_for(Label label) const {
    auto it = per_label.find(label);
    return it == per_label.end() ? h : it->second;
  }

  /// Throws UsageError unless every h > 0 and h >= 0.5 * min(spacing).
  void validate(const LabeledImage& img) const;
};

}  // namespace i2m
