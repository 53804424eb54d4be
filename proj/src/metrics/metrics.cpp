#include "i2m/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "i2m/common/error.hpp"
#include "i2m/geom/quality.hpp"

namespace i2m {

std::string_view category_name(Category c) {
  switch (c) {
    case Category::Preprocess:
      return "preprocess";
    case Category::Mesh:
      return "mesh";
    case Category::Pack:
      return "pack";
    case Category::Unpack:
      return "unpack";
    case Category::Poll:
      return "poll";
    case Category::Idle:
      return "idle";
  }
  return "?";
}

double Breakdown::sum() const {
  double s = 0.0;
  for (double x : seconds) s += x;
  return s;
}

bool Breakdown::accounted(double slack) const { return std::fabs(sum() - wall) <= slack * wall; }

BreakdownTimer::BreakdownTimer(int rank) : start_(Clock::now()), last_(start_) { acc_.rank = rank; }

void BreakdownTimer::settle(Clock::time_point now) {
  if (!stack_.empty()) acc_[stack_.back()] += std::chrono::duration<double>(now - last_).count();
  last_ = now;
}

void BreakdownTimer::enter(Category c) {
  settle(Clock::now());
  stack_.push_back(c);
}

void BreakdownTimer::exit(Category c) {
  if (stack_.empty() || stack_.back() != c) {
    throw InstrumentationError("exit(" + std::string(category_name(c)) + ") does not match the open scope " +
                               (stack_.empty() ? std::string("(none)") : std::string(category_name(stack_.back()))));
  }
  settle(Clock::now());
  stack_.pop_back();
}

Breakdown BreakdownTimer::snapshot() const {
  const auto now = Clock::now();
  Breakdown b = acc_;
  if (!stack_.empty()) b[stack_.back()] += std::chrono::duration<double>(now - last_).count();
  b.wall = std::chrono::duration<double>(now - start_).count();
  return b;
}

Breakdown BreakdownTimer::finish() const {
  if (!stack_.empty()) {
    throw InstrumentationError(std::to_string(stack_.size()) + " timer scope(s) still open, innermost " +
                               std::string(category_name(stack_.back())));
  }
  return snapshot();
}

std::uint64_t QualityReport::total() const {
  std::uint64_t s = 0;
  for (auto c : histogram) s += c;
  return s;
}

int dihedral_bin(double degrees) {
  const int b = static_cast<int>(std::floor(degrees / 5.0));
  return std::clamp(b, 0, kHistogramBins - 1);
}

namespace {

bool kept(const TetMesh& m, TetId t, const LabeledImage* img) {
  if (!img) return true;
  const auto c = m.corners(t);
  return classify(*img, barycenter(c[0], c[1], c[2], c[3])) != kBackground;
}

}  // namespace

QualityReport quality_report(const TetMesh& mesh, const LabeledImage* keep) {
  QualityReport q;
  q.min_dihedral = std::numeric_limits<double>::infinity();
  q.max_dihedral = -std::numeric_limits<double>::infinity();
  const TetId n = mesh.slot_count();
  for (TetId t = 0; t < n; ++t) {
    if (!mesh.tet(t).alive || !kept(mesh, t, keep)) continue;
    const auto c = mesh.corners(t);
    const QualityVector qv = quality(c[0], c[1], c[2], c[3]);
    ++q.elements;
    for (double a : qv.dihedral_deg) {
      ++q.histogram[dihedral_bin(a)];
      if (a < kSliverLow || a > kSliverHigh) ++q.sliver_angles;
      q.min_dihedral = std::min(q.min_dihedral, a);
      q.max_dihedral = std::max(q.max_dihedral, a);
    }
    q.max_radius_edge = std::max(q.max_radius_edge, qv.radius_edge);
  }
  if (q.elements == 0) {
    q.min_dihedral = q.max_dihedral = 0.0;
  } else {
    q.sliver_fraction = static_cast<double>(q.sliver_angles) / (6.0 * static_cast<double>(q.elements));
  }
  return q;
}

std::size_t kept_count(const TetMesh& mesh, const LabeledImage& img) {
  std::size_t n = 0;
  const TetId slots = mesh.slot_count();
  for (TetId t = 0; t < slots; ++t) n += mesh.tet(t).alive && kept(mesh, t, &img);
  return n;
}

nlohmann::json to_json(const Breakdown& b) {
  nlohmann::json j{{"rank", b.rank}, {"wall", b.wall}, {"sum", b.sum()}};
  for (Category c : kCategories) j[std::string(category_name(c))] = b[c];
  return j;
}

Breakdown breakdown_from_json(const nlohmann::json& j) {
  Breakdown b;
  b.rank = j.at("rank").get<int>();
  b.wall = j.at("wall").get<double>();
  for (Category c : kCategories) b[c] = j.at(std::string(category_name(c))).get<double>();
  return b;
}

nlohmann::json to_json(const QualityReport& q) {
  return {{"histogram_bin_deg", 5},
          {"histogram", q.histogram},
          {"elements", q.elements},
          {"sliver_angles", q.sliver_angles},
          {"sliver_fraction", q.sliver_fraction},
          {"min_dihedral", q.min_dihedral},
          {"max_dihedral", q.max_dihedral},
          {"max_radius_edge", q.max_radius_edge}};
}

nlohmann::json to_json(const RefineStats& s) {
  return {{"insertions", s.insertions}, {"initial_bad", s.initial_bad}, {"deferred", s.deferred},
          {"duplicates", s.duplicates}, {"rejected", s.rejected},       {"rollbacks", s.rollbacks},
          {"wall_seconds", s.wall_seconds}};
}

nlohmann::json emit_report(const ReportInput& in) {
  nlohmann::json ranks = nlohmann::json::array();
  for (const Breakdown& b : in.ranks) ranks.push_back(to_json(b));

  nlohmann::json mean, lo, hi;
  auto fold = [&](const std::string& key, auto get) {
    if (in.ranks.empty()) {
      mean[key] = lo[key] = hi[key] = 0.0;
      return;
    }
    double s = 0.0, mn = std::numeric_limits<double>::infinity(), mx = -mn;
    for (const Breakdown& b : in.ranks) {
      const double v = get(b);
      s += v;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    mean[key] = s / static_cast<double>(in.ranks.size());
    lo[key] = mn;
    hi[key] = mx;
  };
  fold("wall", [](const Breakdown& b) { return b.wall; });
  for (Category c : kCategories) fold(std::string(category_name(c)), [c](const Breakdown& b) { return b[c]; });
  // communication = pack + unpack + poll
  fold("communication", [](const Breakdown& b) { return b[Category::Pack] + b[Category::Unpack] + b[Category::Poll]; });

  bool accounted = true;
  for (const Breakdown& b : in.ranks) accounted = accounted && b.accounted();

  nlohmann::json out{{"config", in.config},
                     {"image_checksum", in.image_checksum},
                     {"elements", in.elements},
                     {"quality", to_json(in.quality)},
                     {"stats", to_json(in.stats)},
                     {"ranks", ranks},
                     {"mean", mean},
                     {"min", lo},
                     {"max", hi},
                     {"accounting_ok", accounted},
                     {"grant_log", in.grant_log},
                     {"audits", in.audits.is_null() ? nlohmann::json::object() : in.audits}};
  if (in.extra.is_object()) {
    for (auto it = in.extra.begin(); it != in.extra.end(); ++it) out[it.key()] = it.value();
  }
  return out;
}

std::string report_csv(const nlohmann::json& report) {
  std::ostringstream os;
  os << "rank,wall";
  for (Category c : kCategories) os << ',' << category_name(c);
  os << '\n';
  for (const auto& r : report.at("ranks")) {
    os << r.at("rank").get<int>() << ',' << r.at("wall").get<double>();
    for (Category c : kCategories) os << ',' << r.at(std::string(category_name(c))).get<double>();
    os << '\n';
  }
  return os.str();
}

}  // namespace i2m
