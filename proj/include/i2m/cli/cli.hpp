#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "i2m/decomp/decomposition.hpp"
#include "i2m/delaunay/tet_mesh.hpp"
#include "i2m/image/labeled_image.hpp"
#include "i2m/metrics/metrics.hpp"
#include "i2m/mw/mw.hpp"
#include "json.hpp"

namespace i2m::cli {

enum class Mode { Seq, Shared, Mw };

inline constexpr int kExitOk = 0;
inline constexpr int kExitAudit = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitProtocol = 3;

struct RunConfig {
  Mode mode = Mode::Seq;
  std::string phantom;  // e.g. "sphere:r=16,dims=64"
  std::string image;    // DMI1 raw file
  double h = 0.0;
  double rho = 2.0;
  int depth = 2;
  double coarse_h = 0.0;  // 0: diag / 2^(max(depth, 2) + 1)
  int ranks = 0;          // mw worker count; 0: unset
  int threads = 1;        // per rank
  int pack_threads = 1;   // 0: one per hardware thread
  TransportKind transport = TransportKind::Inproc;
  bool serve_while_meshing = false;
  std::uint64_t seed = 0;
  double time_limit = 0.0;  // wall-time cap per run, 0: none
  bool delaunay_audit = true;
  std::string report, csv, dump, grant_log;

  /// Throws UsageError for invalid combinations, e.g. ranks in seq mode.
  void validate() const;
  int resolved_pack_threads() const;
  double resolved_coarse_h(const Box& bounds) const;
  nlohmann::json to_json() const;
};

struct Audits {
  std::size_t delaunay = 0;
  bool delaunay_run = true;
  std::size_t adjacency = 0;
  std::size_t bad = 0;
  std::size_t grant = 0;

  bool ok() const { return delaunay + adjacency + bad + grant == 0; }
  nlohmann::json to_json() const;
};

struct RunResult {
  TetMesh mesh;
  std::vector<Breakdown> breakdowns;
  std::vector<GrantRecord> grants;
  RefineStats stats;
  QualityReport quality;
  std::size_t kept = 0;
  Audits audits;
  nlohmann::json report;
};

const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);

LabeledImage load_image(const RunConfig& cfg);

/// Runs the selected pipeline, audits the result and builds the report.
/// Writes nothing to disk.
RunResult run(const RunConfig& cfg, const LabeledImage& img);

/// Writes the report, CSV, mesh dump and grant log requested by cfg.
void write_outputs(const RunConfig& cfg, const RunResult& r);

/// One sweep cell: "r=4,t=2,d=3,p=auto" (any subset of keys).
struct SweepCell {
  int ranks = -1, threads = -1, depth = -1, pack_threads = -2;
};
std::vector<SweepCell> parse_grid(const std::string& spec);
RunConfig apply(const RunConfig& base, const SweepCell& cell);

struct SweepResult {
  nlohmann::json table;  // {"rows": [...], "ok": bool, "error"?: string}
  bool ok = true;
};
using RunFn = std::function<RunResult(const RunConfig&, const LabeledImage&)>;
/// Runs every cell; stops at the first audit failure or error, keeping the
/// rows so far.
SweepResult sweep(const RunConfig& base, const std::vector<SweepCell>& cells, const LabeledImage& img,
                  const RunFn& runner = run);
std::string sweep_csv(const nlohmann::json& table);

/// Brute-force checks over a mesh; every violation as one line.
struct AuditListing {
  std::vector<std::string> lines;
  Audits counts;
};
AuditListing audit_mesh(const TetMesh& mesh, const LabeledImage* img, const RefinementRule* rule);

/// Command-line entry point; returns the process exit code.
int main(int argc, char** argv);

}  // namespace i2m::cli
