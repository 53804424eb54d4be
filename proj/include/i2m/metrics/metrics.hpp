#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "i2m/delaunay/refine.hpp"
#include "i2m/delaunay/tet_mesh.hpp"
#include "i2m/image/labeled_image.hpp"
#include "json.hpp"

namespace i2m {

enum class Category { Preprocess, Mesh, Pack, Unpack, Poll, Idle };
inline constexpr int kCategoryCount = 6;
inline constexpr std::array<Category, kCategoryCount> kCategories{Category::Preprocess, Category::Mesh,
                                                                 Category::Pack,       Category::Unpack,
                                                                 Category::Poll,       Category::Idle};

std::string_view category_name(Category c);

/// Seconds per category on one rank, plus that rank's wall time.
struct Breakdown {
  int rank = 0;
  std::array<double, kCategoryCount> seconds{};
  double wall = 0.0;

  double& operator[](Category c) { return seconds[static_cast<int>(c)]; }
  double operator[](Category c) const { return seconds[static_cast<int>(c)]; }
  double sum() const;
  /// |sum - wall| <= slack * wall
  bool accounted(double slack = 0.01) const;
};

/// Wall-clock scope accounting for one thread. Scopes nest; time always
/// accrues to the innermost open scope only.
class BreakdownTimer {
 public:
  using Clock = std::chrono::steady_clock;

  explicit BreakdownTimer(int rank = 0);

  void enter(Category c);
  /// Throws InstrumentationError unless c is the innermost open scope.
  void exit(Category c);
  std::size_t depth() const { return stack_.size(); }

  /// Totals so far, wall time measured up to now.
  Breakdown snapshot() const;
  /// Throws InstrumentationError if scopes are still open.
  Breakdown finish() const;

  class Scope {
   public:
    Scope(BreakdownTimer& t, Category c) : t_(&t), c_(c) { t_->enter(c_); }
    ~Scope() noexcept(false) {
      if (t_) t_->exit(c_);
    }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    BreakdownTimer* t_;
    Category c_;
  };
  Scope scope(Category c) { return Scope(*this, c); }

 private:
  void settle(Clock::time_point now);

  Breakdown acc_;
  Clock::time_point start_;
  Clock::time_point last_;
  std::vector<Category> stack_;
};

inline constexpr int kHistogramBins = 36;
inline constexpr double kSliverLow = 2.0;
inline constexpr double kSliverHigh = 178.0;

struct QualityReport {
  std::array<std::uint64_t, kHistogramBins> histogram{};
  std::uint64_t elements = 0;
  std::uint64_t sliver_angles = 0;
  double sliver_fraction = 0.0;  // of all 6 * elements angles
  double min_dihedral = 0.0;
  double max_dihedral = 0.0;
  double max_radius_edge = 0.0;

  std::uint64_t total() const;
  friend bool operator==(const QualityReport&, const QualityReport&) = default;
};

/// 5-degree bin of a dihedral angle; 180 falls in the top bin.
int dihedral_bin(double degrees);

/// Dihedral histogram over kept tets: with an image, tets whose barycenter
/// classifies as background are skipped; without one every tet is kept.
QualityReport quality_report(const TetMesh& mesh, const LabeledImage* keep = nullptr);

/// Kept-tet count under the same filter.
std::size_t kept_count(const TetMesh& mesh, const LabeledImage& img);

nlohmann::json to_json(const Breakdown& b);
nlohmann::json to_json(const QualityReport& q);
nlohmann::json to_json(const RefineStats& s);
Breakdown breakdown_from_json(const nlohmann::json& j);

struct ReportInput {
  nlohmann::json config;
  std::vector<Breakdown> ranks;
  QualityReport quality;
  RefineStats stats;
  std::uint64_t image_checksum = 0;
  std::uint64_t elements = 0;
  std::string grant_log;  // path, empty if none
  nlohmann::json audits;
  nlohmann::json extra;  // mode-specific fields, merged at top level
};

/// Run report: per-rank breakdowns with across-rank mean, min and max per
/// category, quality, refinement stats, audits and a config echo.
nlohmann::json emit_report(const ReportInput& in);

/// One CSV row per rank: rank, wall, categories.
std::string report_csv(const nlohmann::json& report);

}  // namespace i2m
